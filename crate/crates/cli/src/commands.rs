use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use degrel_core::analysis::{
    decide, decision_text, make_report, parse_sweep_csv, proportion_sweep, summary_text, trace_file_name, SUMMARY_FILE,
    SWEEP_FILE,
};
use degrel_core::degrade::{
    build_paired_dataset, read_dataset, write_dataset, ImagePair, PairedDataset, Split, MANIFEST_FILE,
};
use degrel_core::dri::{run_dri, DriInputs, DriResult, DriTrace};
use degrel_core::models::init_model;
use degrel_core::Error;

use crate::config::ExperimentConfig;
use crate::{exit, CliError};

type Result<T> = std::result::Result<T, CliError>;

/// Flags that apply to every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub force: bool,
    pub jobs: Option<usize>,
    /// Single proportion for `dri` and `dpd`.
    pub proportion: Option<f64>,
}

/// What a command produced, and the exit code it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub message: String,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    fn ok(message: String, files: Vec<PathBuf>) -> Self {
        Outcome {
            code: exit::OK,
            message,
            files,
        }
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io(path, e))
}

/// Apply command-line overrides. The seed drives the dataset, the model
/// initialization and batch composition through named substreams.
pub fn resolve(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<(ExperimentConfig, PathBuf)> {
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
        cfg.dataset.seed = seed;
    }
    let env = std::env::var_os(crate::OUT_ENV).map(PathBuf::from);
    let out = cfg.out_root(opts.out.as_deref(), env.as_deref());
    Ok((cfg, out))
}

fn single_proportion(cfg: &mut ExperimentConfig, opts: &RunOptions) -> Result<f64> {
    if let Some(r) = opts.proportion {
        if !(0.0..=1.0).contains(&r) {
            return Err(CliError::Usage(format!("--proportion {r} is outside [0, 1]")));
        }
        cfg.proportions = vec![r];
    }
    match cfg.proportions.as_slice() {
        [r] => Ok(*r),
        many => Err(CliError::Usage(format!(
            "this command runs a single proportion but the configuration lists {}; pass --proportion",
            many.len()
        ))),
    }
}

pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut text = String::from("configuration is valid\n");
    for line in cfg.echo() {
        text.push_str(&line);
        text.push('\n');
    }
    Ok(Outcome::ok(text, vec![]))
}

fn dataset_paths(ds: &PairedDataset, root: &Path) -> Vec<PathBuf> {
    let mut v = vec![root.join(MANIFEST_FILE), root.join("clean")];
    v.extend(ds.kinds().map(|k| root.join(k.name())));
    v
}

/// Synthesize the dataset described by `cfg` under the output root.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<Outcome> {
    let root = cfg.dataset_root(out);
    let manifest = root.join(MANIFEST_FILE);
    if manifest.exists() {
        if !force {
            return Err(CliError::Usage(format!(
                "a dataset already exists at {}; pass --force to replace it",
                root.display()
            )));
        }
        // Only remove what a dataset consists of.
        let old = degrel_core::degrade::read_manifest(&root)?;
        fs::remove_file(&manifest).map_err(|e| io(&manifest, e))?;
        let mut dirs = vec![root.join("clean")];
        dirs.extend(old.spec.kinds.iter().map(|k| root.join(k.kind().name())));
        for d in dirs {
            if d.exists() {
                fs::remove_dir_all(&d).map_err(|e| io(&d, e))?;
            }
        }
    } else if root.exists() && fs::read_dir(&root).map_err(|e| io(&root, e))?.next().is_some() {
        return Err(CliError::Usage(format!(
            "{} exists, is not empty and holds no dataset manifest; refusing to write into it",
            root.display()
        )));
    }
    let ds = build_paired_dataset(&cfg.dataset)?;
    write_dataset(&ds, &root)?;
    let n = ds.clean().len();
    let kinds = ds.kinds().count();
    Ok(Outcome::ok(
        format!(
            "wrote {} images ({n} clean, {} degraded) and a manifest to {}",
            n * (kinds + 1),
            n * kinds,
            root.display()
        ),
        dataset_paths(&ds, &root),
    ))
}

fn load_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<PairedDataset> {
    let root = cfg.dataset_root(out);
    if !root.join(MANIFEST_FILE).exists() {
        return Err(CliError::Core(Error::Io {
            path: root.join(MANIFEST_FILE),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no dataset found; run `degrel synth` with this configuration first",
            ),
        }));
    }
    let ds = read_dataset(&root)?;
    if ds.spec() != &cfg.dataset {
        return Err(CliError::Usage(format!(
            "the dataset at {} was generated with different settings; rerun `degrel synth --force`",
            root.display()
        )));
    }
    Ok(ds)
}

struct Pools<'a> {
    anchor_train: &'a [ImagePair],
    aux_train: std::borrow::Cow<'a, [ImagePair]>,
    anchor_val: &'a [ImagePair],
    anchor_test: &'a [ImagePair],
}

/// Salt for the independent redraw used as a self-auxiliary pool.
const SELF_AUX_SALT: u64 = 1;

fn pools<'a>(cfg: &ExperimentConfig, ds: &'a PairedDataset) -> Result<Pools<'a>> {
    let aux_train = if cfg.self_auxiliary {
        std::borrow::Cow::Owned(ds.redraw(cfg.anchor, Split::Train, SELF_AUX_SALT)?)
    } else {
        std::borrow::Cow::Borrowed(ds.pairs(cfg.auxiliary, Split::Train)?)
    };
    Ok(Pools {
        anchor_train: ds.pairs(cfg.anchor, Split::Train)?,
        aux_train,
        anchor_val: ds.pairs(cfg.anchor, Split::Val)?,
        anchor_test: ds.pairs(cfg.anchor, Split::Test)?,
    })
}

impl Pools<'_> {
    fn inputs(&self) -> DriInputs<'_> {
        DriInputs {
            anchor_train: self.anchor_train,
            aux_train: &self.aux_train,
            anchor_val: self.anchor_val,
        }
    }
}

fn trace_echo(cfg: &ExperimentConfig, r: f64) -> Vec<String> {
    let mut echo = cfg.echo();
    echo.push(format!("proportion = {r}"));
    echo
}

fn result_text(cfg: &ExperimentConfig, res: &DriResult) -> String {
    let mut s = String::new();
    for line in trace_echo(cfg, res.config.proportion) {
        s.push_str(&format!("# {line}\n"));
    }
    s.push_str(&format!("dri = {}\n", res.dri));
    s.push_str(&format!("steps_used = {}\n", res.steps_used));
    s.push_str(&format!("loss_source = {}\n", res.loss_source()));
    s.push_str(&format!("carrier = {}\n", res.config.carrier));
    s
}

fn run_single(cfg: &ExperimentConfig, out: &Path, r: f64) -> Result<DriResult> {
    let ds = load_dataset(cfg, out)?;
    let p = pools(cfg, &ds)?;
    let model = init_model(&cfg.model_config())?;
    let dri_cfg = cfg.dri_config(r);
    match run_dri(&model, &p.inputs(), &dri_cfg, cfg.seed) {
        Ok(run) => {
            let mut res = run.result;
            res.trace.echo = trace_echo(cfg, r);
            log::info!(
                "DRI {} over {} steps; bookkeeping {:.2?}, training {:.2?}",
                res.dri,
                res.steps_used,
                res.timing.bookkeeping,
                res.timing.training
            );
            Ok(res)
        }
        Err(Error::DegenerateLoss {
            step,
            loss,
            epsilon,
            mut partial,
        }) => {
            // Keep what was measured before the loss collapsed.
            partial.echo = trace_echo(cfg, r);
            let dir = out.join("dri");
            mkdir(&dir)?;
            partial.write(&dir.join("trace.partial.csv"))?;
            Err(CliError::Core(Error::DegenerateLoss {
                step,
                loss,
                epsilon,
                partial,
            }))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_dri(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    let r = single_proportion(&mut cfg, opts)?;
    let res = run_single(&cfg, out, r)?;
    let dir = out.join("dri");
    mkdir(&dir)?;
    let trace = dir.join("trace.csv");
    res.trace.write(&trace)?;
    let summary = dir.join("result.txt");
    write(&summary, &result_text(&cfg, &res))?;
    Ok(Outcome::ok(
        format!("DRI = {} ({} sampled steps, {} loss)", res.dri, res.steps_used, res.loss_source()),
        vec![trace, summary],
    ))
}

pub fn cmd_dpd(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    let r = single_proportion(&mut cfg, opts)?;
    let res = run_single(&cfg, out, r)?;
    let decision = decide(&res);
    let dir = out.join("dpd");
    mkdir(&dir)?;
    let trace = dir.join("trace.csv");
    res.trace.write(&trace)?;
    let path = dir.join("decision.txt");
    let mut text = String::new();
    for line in trace_echo(&cfg, r) {
        text.push_str(&format!("# {line}\n"));
    }
    text.push_str(&decision_text(&decision));
    write(&path, &text)?;
    Ok(Outcome {
        code: if decision.beneficial { exit::OK } else { exit::NOT_BENEFICIAL },
        message: format!("r = {r}: DRI = {} -> {}", decision.dri, decision.verdict()),
        files: vec![trace, path],
    })
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<Outcome> {
    let ds = load_dataset(cfg, out)?;
    let p = pools(cfg, &ds)?;
    let model = init_model(&cfg.model_config())?;
    let dir = out.join("sweep");
    mkdir(&dir)?;
    let jobs = opts.jobs.unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let write_errors = Mutex::new(Vec::new());
    let sink = |run: &degrel_core::analysis::SweepRun| {
        let mut trace = run.dri.trace.clone();
        trace.echo = trace_echo(cfg, run.r);
        if let Err(e) = trace.write(&dir.join(trace_file_name(run.r))) {
            write_errors.lock().expect("sink lock").push(e);
        }
        log::info!("r = {}: DRI {} PSNR {}", run.r, run.dri.dri, run.metrics.psnr);
    };
    let outcome = pool.install(|| {
        proportion_sweep(
            &model,
            &p.inputs(),
            p.anchor_test,
            &cfg.proportions,
            &cfg.dri,
            cfg.eval_steps,
            cfg.seed,
            &sink,
        )
    })?;
    if let Some(e) = write_errors.into_inner().expect("sink lock").pop() {
        return Err(e.into());
    }
    let mut result = outcome.result;
    result.echo = cfg.echo();
    let traces: Vec<(f64, DriTrace)> = outcome
        .runs
        .iter()
        .map(|run| {
            let mut t = run.dri.trace.clone();
            t.echo = trace_echo(cfg, run.r);
            (run.r, t)
        })
        .collect();
    let refs: Vec<(f64, &DriTrace)> = traces.iter().map(|(r, t)| (*r, t)).collect();
    let files = make_report(&result, &refs, &dir, &[])?;
    let summary = fs::read_to_string(dir.join(SUMMARY_FILE)).map_err(|e| io(&dir.join(SUMMARY_FILE), e))?;
    Ok(Outcome::ok(summary, files))
}

/// Re-render the summary of an existing sweep.
pub fn cmd_report(out: &Path) -> Result<Outcome> {
    let dir = out.join("sweep");
    let path = dir.join(SWEEP_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let result = parse_sweep_csv(&text)?;
    let summary = summary_text(&result, &[]);
    let spath = dir.join(SUMMARY_FILE);
    write(&spath, &summary)?;
    Ok(Outcome::ok(summary, vec![spath]))
}
