use crate::dri::{run_dri, DriConfig, DriInputs, DriResult, DriTrace};
use crate::error::Result;
use crate::models::ModelParams;

/// Verdict for one proportion: mixing is beneficial iff DRI > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DpdDecision {
    pub beneficial: bool,
    /// DRI is exactly zero; reported as not beneficial.
    pub neutral: bool,
    pub dri: f64,
    pub config: DriConfig,
    pub trace: DriTrace,
}

impl DpdDecision {
    pub fn verdict(&self) -> &'static str {
        if self.beneficial {
            "beneficial"
        } else if self.neutral {
            "neutral (not beneficial)"
        } else {
            "not beneficial"
        }
    }
}

pub fn decide(result: &DriResult) -> DpdDecision {
    DpdDecision {
        beneficial: result.dri > 0.0,
        neutral: result.dri == 0.0,
        dri: result.dri,
        config: result.config.clone(),
        trace: result.trace.clone(),
    }
}

pub fn dpd_decide(model: &ModelParams, inputs: &DriInputs<'_>, cfg: &DriConfig, seed: u64) -> Result<DpdDecision> {
    Ok(decide(&run_dri(model, inputs, cfg, seed)?.result))
}
