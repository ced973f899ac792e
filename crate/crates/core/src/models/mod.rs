//! Tiny residual restoration networks.

mod checkpoint;
mod net;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{init_model, training_loss, validation_loss, ModelConfig, ModelParams, PairBatch};
