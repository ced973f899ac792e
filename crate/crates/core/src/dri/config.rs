use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mixer::{MixConfig, MixingMode, SamplingMode};
use crate::numcore::SgdConfig;

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Which branch continues the trajectory after each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CarrierMode {
    /// The trajectory is mixed training; the anchor-only update is a
    /// per-step counterfactual.
    #[default]
    Mixed,
    Anchor,
    /// Both branches evolve independently, each measured against its own
    /// previous loss.
    Dual,
}

impl CarrierMode {
    pub fn name(self) -> &'static str {
        match self {
            CarrierMode::Mixed => "mixed",
            CarrierMode::Anchor => "anchor",
            CarrierMode::Dual => "dual",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            CarrierMode::Mixed => "mixed branch carries the trajectory; anchor-only update is the per-step counterfactual",
            CarrierMode::Anchor => "anchor-only branch carries the trajectory; mixed update is the per-step counterfactual",
            CarrierMode::Dual => {
                "anchor-only and mixed trajectories evolve independently; each drop rate uses its own previous loss"
            }
        }
    }
}

impl fmt::Display for CarrierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CarrierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(CarrierMode::Mixed),
            "anchor" => Ok(CarrierMode::Anchor),
            "dual" => Ok(CarrierMode::Dual),
            _ => Err(Error::Parse(format!(
                "unknown carrier mode `{s}` (expected mixed, anchor or dual)"
            ))),
        }
    }
}

/// Which steps contribute a D_t record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    EveryK(usize),
    First(f64),
    Middle(f64),
    Final(f64),
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::EveryK(1)
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::EveryK(0) => Err(Error::invalid("every-k schedule needs k >= 1")),
            Schedule::EveryK(_) => Ok(()),
            Schedule::First(f) | Schedule::Middle(f) | Schedule::Final(f) => {
                if f > 0.0 && f <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("schedule fraction must lie in (0, 1], got {f}")))
                }
            }
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::EveryK(k) => write!(f, "every:{k}"),
            Schedule::First(x) => write!(f, "first:{x}"),
            Schedule::Middle(x) => write!(f, "middle:{x}"),
            Schedule::Final(x) => write!(f, "final:{x}"),
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("schedule `{s}` should look like every:5 or first:0.3")))?;
        let frac = || {
            arg.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad schedule fraction `{arg}`")))
        };
        let sched = match kind {
            "every" => Schedule::EveryK(
                arg.parse()
                    .map_err(|_| Error::Parse(format!("bad schedule step `{arg}`")))?,
            ),
            "first" => Schedule::First(frac()?),
            "middle" => Schedule::Middle(frac()?),
            "final" => Schedule::Final(frac()?),
            _ => {
                return Err(Error::Parse(format!(
                    "unknown schedule `{kind}` (expected every, first, middle or final)"
                )))
            }
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// Sampled steps (1-based, ascending) out of `total` training steps.
pub fn schedule_filter(schedule: Schedule, total: usize) -> Result<Vec<usize>> {
    schedule.validate()?;
    if total == 0 {
        return Err(Error::invalid("a run needs at least one step"));
    }
    let window = |f: f64| {
        // Tolerate representation error so that 0.3 * 10 gives 3, not 4.
        let len = (f * total as f64 - 1e-9).ceil().max(1.0) as usize;
        len.min(total)
    };
    let steps = match schedule {
        Schedule::EveryK(k) => {
            if k > total {
                return Err(Error::invalid(format!("every-{k} schedule exceeds the {total} available steps")));
            }
            (1..=total).step_by(k).collect()
        }
        Schedule::First(f) => (1..=window(f)).collect(),
        Schedule::Final(f) => (total - window(f) + 1..=total).collect(),
        Schedule::Middle(f) => {
            let len = window(f);
            let start = (total - len) / 2 + 1;
            (start..start + len).collect()
        }
    };
    Ok(steps)
}

/// Where the losses in D_t are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossSource {
    #[default]
    Validation,
    /// The anchor training pairs.
    Training,
}

impl fmt::Display for LossSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossSource::Validation => "validation",
            LossSource::Training => "training",
        })
    }
}

impl FromStr for LossSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(LossSource::Validation),
            "training" => Ok(LossSource::Training),
            _ => Err(Error::Parse(format!(
                "unknown loss source `{s}` (expected validation or training)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriConfig {
    pub carrier: CarrierMode,
    pub schedule: Schedule,
    pub loss_source: LossSource,
    pub epsilon: f64,
    pub sgd: SgdConfig,
    pub proportion: f64,
    pub sampling: SamplingMode,
    pub mixing: MixingMode,
}

impl DriConfig {
    pub fn new(sgd: SgdConfig, proportion: f64) -> Self {
        DriConfig {
            carrier: CarrierMode::default(),
            schedule: Schedule::default(),
            loss_source: LossSource::default(),
            epsilon: DEFAULT_EPSILON,
            sgd,
            proportion,
            sampling: SamplingMode::default(),
            mixing: MixingMode::default(),
        }
    }

    pub fn mix(&self) -> MixConfig {
        MixConfig {
            proportion: self.proportion,
            batch_size: self.sgd.batch_size,
            sampling: self.sampling,
            mixing: self.mixing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        self.schedule.validate()?;
        self.mix().validate()?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        schedule_filter(self.schedule, self.sgd.steps).map(|_| ())
    }

    /// `key = value` lines describing this configuration.
    pub fn echo(&self) -> Vec<String> {
        vec![
            format!("proportion = {}", self.proportion),
            format!("sgd.lr = {}", self.sgd.learning_rate),
            format!("sgd.steps = {}", self.sgd.steps),
            format!("sgd.batch = {}", self.sgd.batch_size),
            format!("dri.carrier = {}", self.carrier),
            format!("dri.schedule = {}", self.schedule),
            format!("dri.loss = {}", self.loss_source),
            format!("dri.epsilon = {}", self.epsilon),
            format!("dri.sampling = {}", self.sampling),
            format!("dri.mixing = {}", self.mixing),
        ]
    }
}
