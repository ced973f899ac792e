use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use degrel_cli::{commands, exit, CliError, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "degrel", version, about = "Measure whether mixing an auxiliary degradation helps an anchor restoration task")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root (defaults to the `out` key, then $DEGREL_OUT, then `.`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replace an existing dataset.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Proportion for `dri` and `dpd` (overrides `proportions`).
    #[arg(long, global = true)]
    proportion: Option<f64>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the paired dataset.
    Synth,
    /// Measure the DRI for one proportion.
    Dri,
    /// Run a proportion sweep with evaluation and a report.
    Sweep,
    /// Decide whether one proportion is beneficial (exit 0) or not (exit 1).
    Dpd,
    /// Check a configuration file.
    Validate,
    /// Rebuild the summary of an existing sweep.
    Report,
}

fn run(cli: &Cli) -> Result<commands::Outcome, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <file> is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    let opts = RunOptions {
        out: cli.out.clone(),
        seed: cli.seed,
        force: cli.force,
        jobs: cli.jobs,
        proportion: cli.proportion,
    };
    let (cfg, out) = commands::resolve(cfg, &opts)?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg, &out, opts.force),
        Command::Dri => commands::cmd_dri(&cfg, &out, &opts),
        Command::Sweep => commands::cmd_sweep(&cfg, &out, &opts),
        Command::Dpd => commands::cmd_dpd(&cfg, &out, &opts),
        Command::Validate => commands::cmd_validate(&cfg),
        Command::Report => commands::cmd_report(&out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.message.trim_end());
            outcome.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit::ERROR
        }
    };
    ExitCode::from(code as u8)
}
