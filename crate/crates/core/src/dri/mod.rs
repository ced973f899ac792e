//! Lockstep branch updates and the drop-rate difference index (DRI).
//!
//! At every step two SGD updates are taken from the same parameters with the
//! same learning rate: one on an anchor-only batch, one on a batch mixing in
//! auxiliary pairs. `D_t` is the difference of their anchor-loss values
//! normalized by the current loss; the DRI is the mean `D_t` over the
//! sampled steps. Positive values mean the mixed update lowered the anchor
//! loss more than the anchor-only update did.

mod config;
mod engine;
mod trace;

pub use config::{schedule_filter, CarrierMode, DriConfig, LossSource, Schedule, DEFAULT_EPSILON};
pub use engine::{
    continue_training, dri_on_training_loss, dri_step, drive, run_dri, DriInputs, DriResult, DriRun, Learner,
    StepBatches, StepOutcome, Timing,
};
pub use trace::{compensated_mean, DriTrace, KahanSum, TraceRecord, TRACE_HEADER, TRACE_HEADER_DUAL};
