//! Measure whether mixing an auxiliary degradation into training batches
//! helps an anchor restoration task.
//!
//! The building blocks are a small f32 tensor library with reverse-mode
//! autodiff ([`numcore`]), tiny residual CNNs ([`models`]), synthetic
//! degradations and paired datasets ([`degrade`]), batch mixing
//! ([`mixer`]), the lockstep DRI engine ([`dri`]) and decisions, sweeps and
//! metrics ([`analysis`]).

pub mod analysis;
pub mod degrade;
pub mod dri;
pub mod error;
pub mod mixer;
pub mod models;
pub mod numcore;
pub mod rng;

pub use analysis::{dpd_decide, proportion_sweep, DpdDecision, Metrics, SweepResult, SweepRow};
pub use degrade::{build_paired_dataset, DatasetSpec, DegradationKind, ImagePair, PairedDataset, Split};
pub use dri::{run_dri, CarrierMode, DriConfig, DriInputs, DriResult, DriTrace, LossSource, Schedule};
pub use error::{Error, Result};
pub use mixer::{compose_batch, rounding_rule, BatchMix, MixConfig};
pub use models::{init_model, ModelConfig, ModelParams, PairBatch};
pub use numcore::{SgdConfig, Tensor};
pub use rng::StreamKey;
