use std::time::{Duration, Instant};

use crate::degrade::ImagePair;
use crate::error::{Error, Result};
use crate::mixer::{compose_batch, rounding_rule, AsPair};
use crate::models::{validation_loss, ModelParams, PairBatch};

use super::config::{schedule_filter, CarrierMode, DriConfig, LossSource};
use super::trace::{DriTrace, TraceRecord};

/// A model that can take one SGD step and report a loss on a fixed set.
pub trait Learner: Clone {
    type Batch;

    fn updated(&self, batch: &Self::Batch, lr: f64) -> Result<Self>;

    /// Loss on an evaluation set. Must not draw random numbers.
    fn loss(&self, set: &Self::Batch) -> Result<f64>;
}

impl Learner for ModelParams {
    type Batch = PairBatch;

    fn updated(&self, batch: &PairBatch, lr: f64) -> Result<Self> {
        self.sgd_updated(batch, lr as f32)
    }

    fn loss(&self, set: &PairBatch) -> Result<f64> {
        validation_loss(self, set)
    }
}

/// Outcome of one lockstep pair of updates.
#[derive(Debug, Clone)]
pub struct StepOutcome<L> {
    pub d_t: f64,
    pub loss_base: f64,
    pub loss_anchor: f64,
    pub loss_mixed: f64,
    pub anchor_next: L,
    pub mixed_next: L,
}

fn degenerate(step: usize, loss: f64, epsilon: f64) -> Error {
    Error::DegenerateLoss {
        step,
        loss,
        epsilon,
        partial: Box::default(),
    }
}

fn checked(loss: f64, step: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::invalid(format!(
            "loss became non-finite at step {step}; the learning rate is likely too high"
        )))
    }
}

/// Both branch updates from the same `theta` with the same `lr`, and
/// `D_t = (L(θ_anchor) - L(θ_mixed)) / L(θ)` on `probe`.
pub fn dri_step<L: Learner>(
    theta: &L,
    anchor_batch: &L::Batch,
    mixed_batch: &L::Batch,
    probe: &L::Batch,
    lr: f64,
    epsilon: f64,
) -> Result<StepOutcome<L>> {
    let loss_base = theta.loss(probe)?;
    if loss_base.is_nan() || loss_base < epsilon {
        return Err(degenerate(0, loss_base, epsilon));
    }
    let anchor_next = theta.updated(anchor_batch, lr)?;
    let mixed_next = theta.updated(mixed_batch, lr)?;
    let loss_anchor = anchor_next.loss(probe)?;
    let loss_mixed = mixed_next.loss(probe)?;
    Ok(StepOutcome {
        d_t: (loss_anchor - loss_mixed) / loss_base,
        loss_base,
        loss_anchor,
        loss_mixed,
        anchor_next,
        mixed_next,
    })
}

/// Wall-clock split of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timing {
    /// Carrier updates and batch assembly.
    pub training: Duration,
    /// Counterfactual updates and loss evaluations at sampled steps.
    pub bookkeeping: Duration,
}

/// Steps of one run: the anchor batch, and the mixed batch unless it is
/// identical to the anchor batch.
pub type StepBatches<B> = (B, Option<B>);

/// Generic engine over any [`Learner`]. Returns the carrier parameters (the
/// mixed trajectory in dual mode), the records, and timing.
pub fn drive<L, F>(init: &L, cfg: &DriConfig, probe: &L::Batch, mut batches: F) -> Result<(L, Vec<TraceRecord>, Timing)>
where
    L: Learner,
    F: FnMut(usize) -> Result<StepBatches<L::Batch>>,
{
    cfg.validate()?;
    let total = cfg.sgd.steps;
    let mut sampled = vec![false; total + 2];
    for s in schedule_filter(cfg.schedule, total)? {
        sampled[s] = true;
    }
    let lr = f64::from(cfg.sgd.learning_rate);
    let eps = cfg.epsilon;
    let mut records = Vec::new();
    let mut timing = Timing::default();

    let fail = |records: &Vec<TraceRecord>, e: Error| match e {
        Error::DegenerateLoss { step, loss, epsilon, .. } => Error::DegenerateLoss {
            step,
            loss,
            epsilon,
            partial: Box::new(DriTrace {
                echo: cfg.echo(),
                records: records.clone(),
            }),
        },
        other => other,
    };
    let guard = |loss: f64, step: usize| -> Result<f64> {
        let loss = checked(loss, step)?;
        if loss >= eps {
            Ok(loss)
        } else {
            Err(degenerate(step, loss, eps))
        }
    };

    match cfg.carrier {
        CarrierMode::Mixed | CarrierMode::Anchor => {
            let mixed_carries = cfg.carrier == CarrierMode::Mixed;
            let mut theta = init.clone();
            // L(θ^t) when the previous step already evaluated it.
            let mut cached: Option<f64> = None;
            for (t, &sample) in sampled.iter().enumerate().take(total + 1).skip(1) {
                let t0 = Instant::now();
                let (anchor, mixed) = batches(t)?;
                let carry_batch = match (&mixed, mixed_carries) {
                    (Some(m), true) => m,
                    _ => &anchor,
                };
                let next = theta.updated(carry_batch, lr)?;
                let t1 = Instant::now();
                timing.training += t1 - t0;
                if sample {
                    let base = match cached {
                        Some(l) => l,
                        None => theta.loss(probe)?,
                    };
                    let base = guard(base, t).map_err(|e| fail(&records, e))?;
                    let other = match &mixed {
                        None => None,
                        Some(m) => Some(theta.updated(if mixed_carries { &anchor } else { m }, lr)?),
                    };
                    let l_next = checked(next.loss(probe)?, t)?;
                    let l_other = match &other {
                        None => l_next,
                        Some(o) => checked(o.loss(probe)?, t)?,
                    };
                    let (la, lm) = if mixed_carries { (l_other, l_next) } else { (l_next, l_other) };
                    records.push(TraceRecord {
                        step: t,
                        loss_base: base,
                        loss_anchor: la,
                        loss_mixed: lm,
                        d_t: (la - lm) / base,
                        loss_base_mixed: None,
                    });
                    cached = Some(l_next);
                    timing.bookkeeping += t1.elapsed();
                } else {
                    cached = None;
                }
                theta = next;
            }
            Ok((theta, records, timing))
        }
        CarrierMode::Dual => {
            let mut theta_a = init.clone();
            let mut theta_m = init.clone();
            let mut cached: Option<(f64, f64)> = None;
            for (t, &sample) in sampled.iter().enumerate().take(total + 1).skip(1) {
                let t0 = Instant::now();
                let (anchor, mixed) = batches(t)?;
                let next_a = theta_a.updated(&anchor, lr)?;
                let next_m = theta_m.updated(mixed.as_ref().unwrap_or(&anchor), lr)?;
                let t1 = Instant::now();
                timing.training += t1 - t0;
                if sample {
                    let (ba, bm) = match cached {
                        Some(c) => c,
                        None => (theta_a.loss(probe)?, theta_m.loss(probe)?),
                    };
                    let ba = guard(ba, t).map_err(|e| fail(&records, e))?;
                    let bm = guard(bm, t).map_err(|e| fail(&records, e))?;
                    let la = checked(next_a.loss(probe)?, t)?;
                    let lm = checked(next_m.loss(probe)?, t)?;
                    let phi_a = (ba - la) / ba;
                    let phi_m = (bm - lm) / bm;
                    records.push(TraceRecord {
                        step: t,
                        loss_base: ba,
                        loss_anchor: la,
                        loss_mixed: lm,
                        d_t: phi_m - phi_a,
                        loss_base_mixed: Some(bm),
                    });
                    cached = Some((la, lm));
                    timing.bookkeeping += t1.elapsed();
                } else {
                    cached = None;
                }
                theta_a = next_a;
                theta_m = next_m;
            }
            Ok((theta_m, records, timing))
        }
    }
}

/// The pools a DRI run draws from.
#[derive(Debug, Clone, Copy)]
pub struct DriInputs<'a> {
    pub anchor_train: &'a [ImagePair],
    pub aux_train: &'a [ImagePair],
    pub anchor_val: &'a [ImagePair],
}

fn stack<P: AsPair>(pairs: &[P]) -> Result<PairBatch> {
    let v: Vec<_> = pairs.iter().map(AsPair::as_pair).collect();
    PairBatch::from_images(&v)
}

impl DriInputs<'_> {
    /// The set the losses in D_t are measured on: the anchor validation
    /// pairs, or for [`LossSource::Training`] the whole anchor training pool
    /// (the same pairs the batches are drawn from).
    pub fn probe(&self, source: LossSource) -> Result<PairBatch> {
        match source {
            LossSource::Validation => stack(self.anchor_val),
            LossSource::Training => stack(self.anchor_train),
        }
    }

    /// Gathered batches for 1-based `step`.
    pub fn batches(&self, cfg: &DriConfig, step: usize, seed: u64) -> Result<StepBatches<PairBatch>> {
        let mix = compose_batch(self.anchor_train, self.aux_train, &cfg.mix(), step, seed)?;
        if mix.is_pure_anchor() {
            let a = stack(&mix.anchor.iter().map(|&i| &self.anchor_train[i]).collect::<Vec<_>>())?;
            Ok((a, None))
        } else {
            let (a, m) = mix.gather(self.anchor_train, self.aux_train)?;
            Ok((a, Some(m)))
        }
    }
}

/// A finished DRI measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DriResult {
    /// Mean D_t over the sampled steps.
    pub dri: f64,
    /// Number of sampled steps averaged.
    pub steps_used: usize,
    pub config: DriConfig,
    pub trace: DriTrace,
    pub timing: Timing,
}

impl DriResult {
    pub fn loss_source(&self) -> LossSource {
        self.config.loss_source
    }
}

/// A DRI result with the trajectory's final parameters.
#[derive(Debug, Clone)]
pub struct DriRun {
    pub result: DriResult,
    pub params: ModelParams,
}

/// Run the lockstep engine for `cfg.sgd.steps` steps from `model`.
///
/// `seed` drives batch composition.
pub fn run_dri(model: &ModelParams, inputs: &DriInputs<'_>, cfg: &DriConfig, seed: u64) -> Result<DriRun> {
    cfg.validate()?;
    if inputs.anchor_train.is_empty() || inputs.anchor_val.is_empty() {
        return Err(Error::invalid("a DRI run needs anchor training and validation pairs"));
    }
    rounding_rule(cfg.proportion, cfg.sgd.batch_size);
    let probe = inputs.probe(cfg.loss_source)?;
    let (params, records, timing) = drive(model, cfg, &probe, |t| inputs.batches(cfg, t, seed))?;
    let trace = DriTrace {
        echo: cfg.echo(),
        records,
    };
    let dri = trace
        .dri()
        .ok_or_else(|| Error::invalid("the schedule sampled no steps"))?;
    Ok(DriRun {
        result: DriResult {
            dri,
            steps_used: trace.records.len(),
            config: cfg.clone(),
            trace,
            timing,
        },
        params,
    })
}

/// [`run_dri`] with losses measured on the anchor training pairs.
pub fn dri_on_training_loss(model: &ModelParams, inputs: &DriInputs<'_>, cfg: &DriConfig, seed: u64) -> Result<DriRun> {
    let cfg = DriConfig {
        loss_source: LossSource::Training,
        ..cfg.clone()
    };
    run_dri(model, inputs, &cfg, seed)
}

/// Plain SGD on the mixed batches of steps `first..first + steps`, continuing
/// a trajectory. Used to train past the DRI window before evaluation.
pub fn continue_training(
    model: &ModelParams,
    inputs: &DriInputs<'_>,
    cfg: &DriConfig,
    seed: u64,
    first: usize,
    steps: usize,
) -> Result<ModelParams> {
    let lr = cfg.sgd.learning_rate;
    let mut theta = model.clone();
    for t in first..first + steps {
        let (a, m) = inputs.batches(cfg, t, seed)?;
        theta = theta.sgd_updated(m.as_ref().unwrap_or(&a), lr)?;
    }
    if !theta.is_finite() {
        return Err(Error::invalid(
            "parameters became non-finite during training; the learning rate is likely too high",
        ));
    }
    Ok(theta)
}
