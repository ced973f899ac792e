use rayon::prelude::*;

use crate::degrade::ImagePair;
use crate::dri::{continue_training, run_dri, CarrierMode, DriConfig, DriInputs, DriResult};
use crate::error::{Error, Result};
use crate::mixer::AsPair;
use crate::models::{ModelParams, PairBatch};

use super::metrics::{evaluate, Metrics};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub r: f64,
    pub dri: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Configuration echo shared by every row.
    pub echo: Vec<String>,
    pub carrier: CarrierMode,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn baseline(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.r == 0.0)
    }
}

/// Everything produced for one proportion.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub r: f64,
    pub dri: DriResult,
    pub metrics: Metrics,
}

pub struct SweepOutcome {
    pub result: SweepResult,
    pub runs: Vec<SweepRun>,
}

fn row_config(cfg: &DriConfig, r: f64) -> DriConfig {
    DriConfig {
        proportion: r,
        ..cfg.clone()
    }
}

/// One row: a DRI run from `model`, then `eval_steps` more mixed-batch
/// steps, then PSNR/SSIM on `test`.
pub fn sweep_row(
    model: &ModelParams,
    inputs: &DriInputs<'_>,
    test: &PairBatch,
    cfg: &DriConfig,
    r: f64,
    eval_steps: usize,
    seed: u64,
) -> Result<SweepRun> {
    let cfg = row_config(cfg, r);
    let run = run_dri(model, inputs, &cfg, seed)?;
    let trained = if eval_steps > 0 {
        continue_training(&run.params, inputs, &cfg, seed, cfg.sgd.steps + 1, eval_steps)?
    } else {
        run.params
    };
    Ok(SweepRun {
        r,
        dri: run.result,
        metrics: evaluate(&trained, test)?,
    })
}

/// Run every proportion in `r_list` from the same initial parameters. Rows
/// run concurrently on the current rayon pool; `sink` sees each finished row
/// (in completion order) so callers can persist partial results.
#[allow(clippy::too_many_arguments)]
pub fn proportion_sweep(
    model: &ModelParams,
    inputs: &DriInputs<'_>,
    test: &[ImagePair],
    r_list: &[f64],
    cfg: &DriConfig,
    eval_steps: usize,
    seed: u64,
    sink: &(dyn Fn(&SweepRun) + Sync),
) -> Result<SweepOutcome> {
    if r_list.is_empty() {
        return Err(Error::invalid("the proportion list is empty"));
    }
    if !r_list.contains(&0.0) {
        return Err(Error::invalid("the proportion list must include 0 as the baseline"));
    }
    for &r in r_list {
        row_config(cfg, r).validate()?;
    }
    let pairs: Vec<_> = test.iter().map(AsPair::as_pair).collect();
    let test = PairBatch::from_images(&pairs)?;
    let runs = r_list
        .par_iter()
        .map(|&r| {
            let run = sweep_row(model, inputs, &test, cfg, r, eval_steps, seed)?;
            sink(&run);
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;
    let base = runs
        .iter()
        .find(|run| run.r == 0.0)
        .map(|run| run.metrics)
        .expect("baseline present");
    let rows = runs
        .iter()
        .map(|run| SweepRow {
            r: run.r,
            dri: run.dri.dri,
            psnr: run.metrics.psnr,
            ssim: run.metrics.ssim,
            delta_psnr: run.metrics.psnr - base.psnr,
            delta_ssim: run.metrics.ssim - base.ssim,
        })
        .collect();
    let mut echo: Vec<String> = cfg.echo().into_iter().filter(|l| !l.starts_with("proportion")).collect();
    echo.push(format!("sweep.eval_steps = {eval_steps}"));
    echo.push(format!("seed = {seed}"));
    Ok(SweepOutcome {
        result: SweepResult {
            echo,
            carrier: cfg.carrier,
            rows,
        },
        runs,
    })
}
