//! Command implementations behind the `degrel` binary.

pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use commands::{cmd_dpd, cmd_dri, cmd_report, cmd_sweep, cmd_synth, cmd_validate, Outcome, RunOptions};
pub use config::{Diagnostic, Diagnostics, ExperimentConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DEGREL_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: invalid configuration\n{diagnostics}")]
    Config { path: PathBuf, diagnostics: Diagnostics },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] degrel_core::Error),
}

/// Process exit codes shared by every subcommand.
pub mod exit {
    pub const OK: i32 = 0;
    pub const NOT_BENEFICIAL: i32 = 1;
    pub const ERROR: i32 = 2;
}
