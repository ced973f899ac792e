//! Decisions, sweeps, image metrics and reports.

mod dpd;
mod metrics;
mod report;
mod sweep;

pub use dpd::{decide, dpd_decide, DpdDecision};
pub use metrics::{evaluate, pearson, psnr, ssim, Metrics, PSNR_CAP, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    decision_text, dri_psnr_correlation, make_report, parse_sweep_csv, summary_text, sweep_csv, trace_file_name,
    SUMMARY_FILE, SWEEP_FILE, SWEEP_HEADER,
};
pub use sweep::{proportion_sweep, sweep_row, SweepOutcome, SweepResult, SweepRow, SweepRun};
