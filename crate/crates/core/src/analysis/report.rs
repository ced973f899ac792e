use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dri::{CarrierMode, DriTrace};
use crate::error::{Error, Result};

use super::dpd::DpdDecision;
use super::metrics::pearson;
use super::sweep::{SweepResult, SweepRow};

pub const SWEEP_HEADER: &str = "r,dri,psnr,ssim,delta_psnr,delta_ssim";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::new();
    for line in &result.echo {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.r, r.dri, r.psnr, r.ssim, r.delta_psnr, r.delta_ssim
        );
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<SweepResult> {
    let mut echo = Vec::new();
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (n, line) in text.lines().enumerate() {
        let bad = |what: String| Error::Parse(format!("sweep line {}: {what}", n + 1));
        if !seen_header {
            if let Some(rest) = line.strip_prefix('#') {
                echo.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
                continue;
            }
            if line != SWEEP_HEADER {
                return Err(bad(format!("unexpected header `{line}`")));
            }
            seen_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let v = line
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|_| bad(format!("bad number `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != 6 {
            return Err(bad("expected 6 columns".into()));
        }
        rows.push(SweepRow {
            r: v[0],
            dri: v[1],
            psnr: v[2],
            ssim: v[3],
            delta_psnr: v[4],
            delta_ssim: v[5],
        });
    }
    if !seen_header {
        return Err(Error::Parse("sweep file has no header".into()));
    }
    let carrier = echo
        .iter()
        .find_map(|l| l.strip_prefix("dri.carrier = "))
        .ok_or_else(|| Error::Parse("sweep file does not record dri.carrier".into()))?
        .parse()?;
    Ok(SweepResult { echo, carrier, rows })
}

/// Pearson(DRI, ΔPSNR) over the rows with r > 0.
pub fn dri_psnr_correlation(result: &SweepResult) -> Result<f64> {
    let (d, p): (Vec<f64>, Vec<f64>) = result
        .rows
        .iter()
        .filter(|r| r.r > 0.0)
        .map(|r| (r.dri, r.delta_psnr))
        .unzip();
    pearson(&d, &p)
}

fn carrier_line(carrier: CarrierMode) -> String {
    format!("carrier: {carrier} ({})", carrier.describe())
}

pub fn summary_text(result: &SweepResult, extra: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", carrier_line(result.carrier));
    for line in &result.echo {
        let _ = writeln!(out, "config: {line}");
    }
    out.push('\n');
    for row in &result.rows {
        let verdict = if row.dri > 0.0 {
            "beneficial"
        } else if row.dri == 0.0 {
            "neutral (not beneficial)"
        } else {
            "not beneficial"
        };
        let _ = writeln!(
            out,
            "r={}: DRI={} -> {verdict}; PSNR={} (delta {}), SSIM={} (delta {})",
            row.r, row.dri, row.psnr, row.delta_psnr, row.ssim, row.delta_ssim
        );
    }
    out.push('\n');
    let nonzero = result.rows.iter().filter(|r| r.r > 0.0).count();
    match dri_psnr_correlation(result) {
        Ok(c) => {
            let _ = writeln!(out, "pearson(DRI, delta PSNR) over {nonzero} rows with r > 0: {c}");
        }
        Err(e) => {
            let _ = writeln!(
                out,
                "pearson(DRI, delta PSNR) omitted: {nonzero} rows with r > 0 ({e})"
            );
        }
    }
    for line in extra {
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn trace_file_name(r: f64) -> String {
    format!("trace_r{r}.csv")
}

/// Write the sweep CSV, one trace CSV per row and the summary into `dir`.
pub fn make_report(result: &SweepResult, traces: &[(f64, &DriTrace)], dir: &Path, extra: &[String]) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() {
        return Err(Error::io(dir, std::io::Error::other("empty sweep: nothing to report")));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join(SWEEP_FILE);
    fs::write(&path, sweep_csv(result)).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    for (r, trace) in traces {
        let path = dir.join(trace_file_name(*r));
        trace.write(&path)?;
        written.push(path);
    }
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, summary_text(result, extra)).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Text block for a single decision.
pub fn decision_text(d: &DpdDecision) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", carrier_line(d.config.carrier));
    for line in &d.config.echo() {
        let _ = writeln!(out, "config: {line}");
    }
    let _ = writeln!(out, "dri = {}", d.dri);
    let _ = writeln!(out, "steps = {}", d.trace.records.len());
    let _ = writeln!(out, "beneficial = {}", d.beneficial);
    let _ = writeln!(out, "neutral = {}", d.neutral);
    let _ = writeln!(out, "verdict = {}", d.verdict());
    out
}
