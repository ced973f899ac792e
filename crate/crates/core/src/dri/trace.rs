use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "step,loss_base,loss_anchor_branch,loss_mixed_branch,d_t";
pub const TRACE_HEADER_DUAL: &str = "step,loss_base,loss_anchor_branch,loss_mixed_branch,d_t,loss_base_mixed";

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::default();
        for x in iter {
            k.add(x);
        }
        k
    }
}

/// Mean with compensated summation; `None` for an empty input.
pub fn compensated_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut k = KahanSum::default();
    let mut n = 0usize;
    for v in values {
        k.add(v);
        n += 1;
    }
    (n > 0).then(|| k.value() / n as f64)
}

/// One sampled step.
///
/// In dual-trajectory mode `loss_base` is the anchor trajectory's previous
/// loss and `loss_base_mixed` the mixed trajectory's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub loss_base: f64,
    pub loss_anchor: f64,
    pub loss_mixed: f64,
    pub d_t: f64,
    pub loss_base_mixed: Option<f64>,
}

impl TraceRecord {
    /// D_t recomputed from the stored losses.
    pub fn recomputed(&self) -> f64 {
        match self.loss_base_mixed {
            None => (self.loss_anchor - self.loss_mixed) / self.loss_base,
            Some(bm) => {
                let phi_m = (bm - self.loss_mixed) / bm;
                let phi_a = (self.loss_base - self.loss_anchor) / self.loss_base;
                phi_m - phi_a
            }
        }
    }
}

/// Per-step records plus the configuration echo that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriTrace {
    pub echo: Vec<String>,
    pub records: Vec<TraceRecord>,
}

impl DriTrace {
    pub fn is_dual(&self) -> bool {
        self.records.first().is_some_and(|r| r.loss_base_mixed.is_some())
    }

    pub fn d_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.d_t)
    }

    /// Mean D_t over all records.
    pub fn dri(&self) -> Option<f64> {
        compensated_mean(self.d_values())
    }

    /// Mean D_t over the records whose step is in `steps`.
    pub fn dri_over(&self, steps: &[usize]) -> Option<f64> {
        compensated_mean(
            self.records
                .iter()
                .filter(|r| steps.binary_search(&r.step).is_ok())
                .map(|r| r.d_t),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in &self.echo {
            let _ = writeln!(out, "# {line}");
        }
        let dual = self.is_dual();
        out.push_str(if dual { TRACE_HEADER_DUAL } else { TRACE_HEADER });
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{},{},{},{}", r.step, r.loss_base, r.loss_anchor, r.loss_mixed, r.d_t);
            if let Some(bm) = r.loss_base_mixed {
                let _ = write!(out, ",{bm}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<DriTrace> {
        let mut echo = Vec::new();
        let mut lines = text.lines().enumerate();
        let mut header = None;
        for (n, line) in lines.by_ref() {
            if let Some(rest) = line.strip_prefix('#') {
                echo.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
            } else {
                header = Some((n, line));
                break;
            }
        }
        let dual = match header {
            Some((_, TRACE_HEADER)) => false,
            Some((_, TRACE_HEADER_DUAL)) => true,
            Some((n, h)) => return Err(Error::Parse(format!("trace line {}: unexpected header `{h}`", n + 1))),
            None => return Err(Error::Parse("trace has no header".into())),
        };
        let mut records = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("trace line {}: {what}", n + 1));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != if dual { 6 } else { 5 } {
                return Err(bad("wrong number of columns"));
            }
            let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad(&format!("bad number `{}`", cols[i])));
            records.push(TraceRecord {
                step: cols[0].parse().map_err(|_| bad("bad step"))?,
                loss_base: num(1)?,
                loss_anchor: num(2)?,
                loss_mixed: num(3)?,
                d_t: num(4)?,
                loss_base_mixed: if dual { Some(num(5)?) } else { None },
            });
        }
        Ok(DriTrace { echo, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<DriTrace> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DriTrace::parse_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(step: usize, d: f64) -> TraceRecord {
        TraceRecord {
            step,
            loss_base: 1.0,
            loss_anchor: 1.0,
            loss_mixed: 1.0 - d,
            d_t: d,
            loss_base_mixed: None,
        }
    }

    #[test]
    fn mean_of_opposites_is_zero() {
        let t = DriTrace {
            echo: vec![],
            records: vec![rec(1, 0.1), rec(2, -0.1)],
        };
        assert_eq!(t.dri(), Some(0.0));
        assert_eq!(DriTrace::default().dri(), None);
    }

    #[test]
    fn kahan_beats_naive() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        assert_eq!(k.value(), 1.0 + 1e-12);
    }

    #[test]
    fn csv_round_trip_with_echo() {
        let t = DriTrace {
            echo: vec!["seed = 3".into(), "dri.carrier = mixed".into()],
            records: vec![rec(1, 1e-7), rec(4, -0.123_456_789_012_345_67), rec(7, 0.0)],
        };
        let text = t.to_csv();
        assert!(text.starts_with("# seed = 3\n# dri.carrier = mixed\nstep,loss_base"));
        assert_eq!(DriTrace::parse_csv(&text).unwrap(), t);
    }

    #[test]
    fn dual_trace_has_extra_column() {
        let mut r = rec(1, 0.5);
        r.loss_base_mixed = Some(2.0);
        let t = DriTrace {
            echo: vec![],
            records: vec![r],
        };
        assert!(t.to_csv().starts_with(TRACE_HEADER_DUAL));
        assert_eq!(DriTrace::parse_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn parse_errors() {
        assert!(DriTrace::parse_csv("").is_err());
        assert!(DriTrace::parse_csv("a,b\n").is_err());
        assert!(DriTrace::parse_csv(&format!("{TRACE_HEADER}\n1,2,3\n")).is_err());
        assert!(DriTrace::parse_csv(&format!("{TRACE_HEADER}\n1,2,3,x,5\n")).is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip(vals in proptest::collection::vec(proptest::num::f64::NORMAL, 4)) {
            let t = DriTrace {
                echo: vec![],
                records: vec![TraceRecord {
                    step: 3,
                    loss_base: vals[0],
                    loss_anchor: vals[1],
                    loss_mixed: vals[2],
                    d_t: vals[3],
                    loss_base_mixed: None,
                }],
            };
            prop_assert_eq!(DriTrace::parse_csv(&t.to_csv()).unwrap(), t);
        }

        #[test]
        fn mean_times_count_is_sum(vals in proptest::collection::vec(-1e-2f64..1e-2, 1..200)) {
            let mean = compensated_mean(vals.iter().copied()).unwrap();
            let sum: KahanSum = vals.iter().copied().collect();
            prop_assert!((mean * vals.len() as f64 - sum.value()).abs() <= 1e-15 * vals.len() as f64);
        }
    }
}
