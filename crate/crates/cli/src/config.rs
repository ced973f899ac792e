//! Experiment configuration files.
//!
//! One `key = value` per line, `#` starts a comment line. Keys are grouped
//! by dotted prefixes (`sgd.lr`, `dri.carrier`, ...). Unknown and duplicate
//! keys are errors; all problems are collected and reported together with
//! their line numbers, and nothing is applied unless the whole file is valid.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use degrel_core::degrade::{DatasetSpec, DegradationKind, KindConfig, SplitCounts};
use degrel_core::dri::{CarrierMode, DriConfig, LossSource, Schedule, DEFAULT_EPSILON};
use degrel_core::mixer::{MixingMode, SamplingMode};
use degrel_core::models::ModelConfig;
use degrel_core::numcore::SgdConfig;

pub const KEYS: &[&str] = &[
    "anchor",
    "auxiliary",
    "self_auxiliary",
    "proportions",
    "seed",
    "out",
    "dataset.dir",
    "dataset.kinds",
    "dataset.size",
    "dataset.channels",
    "dataset.train",
    "dataset.val",
    "dataset.test",
    "degrade.noise",
    "degrade.haze",
    "degrade.rain",
    "degrade.snow",
    "degrade.adversarial",
    "model.widths",
    "model.kernel",
    "sgd.lr",
    "sgd.steps",
    "sgd.batch",
    "dri.carrier",
    "dri.schedule",
    "dri.loss",
    "dri.epsilon",
    "dri.mixing",
    "dri.sampling",
    "sweep.eval_steps",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// All problems found in a configuration file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostics {}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub anchor: DegradationKind,
    pub auxiliary: DegradationKind,
    pub self_auxiliary: bool,
    pub proportions: Vec<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub dri: DriConfig,
    pub eval_steps: usize,
}

pub const DEFAULT_PROPORTIONS: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];

struct Entry<'a> {
    line: usize,
    value: &'a str,
}

struct Parser<'a> {
    entries: BTreeMap<&'a str, Entry<'a>>,
    diags: Vec<Diagnostic>,
}

impl<'a> Parser<'a> {
    fn err(&mut self, line: Option<usize>, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            line,
            message: message.into(),
        });
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    /// Parse `key` with `f`, falling back to `default` when absent or bad.
    fn get<T>(&mut self, key: &str, default: T, f: impl FnOnce(&str) -> Result<T, String>) -> T {
        let Some(e) = self.entries.get(key) else {
            return default;
        };
        let (line, value) = (e.line, e.value);
        match f(value) {
            Ok(v) => v,
            Err(msg) => {
                self.err(Some(line), format!("{key}: {msg}"));
                default
            }
        }
    }
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("`{s}` is not a valid number"))
}

fn list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',').map(|p| num(p.trim())).collect()
}

fn core<T, E: fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Diagnostics> {
        let mut p = Parser {
            entries: BTreeMap::new(),
            diags: Vec::new(),
        };
        let mut unknown = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                p.err(Some(n), "expected `key = value`");
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                unknown.push((n, k));
                continue;
            }
            if let Some(prev) = p.entries.get(k) {
                let first = prev.line;
                p.err(Some(n), format!("duplicate key `{k}` (first set on line {first})"));
                continue;
            }
            p.entries.insert(k, Entry { line: n, value: v });
        }
        if !unknown.is_empty() {
            let names: Vec<&str> = unknown.iter().map(|u| u.1).collect();
            for &(n, k) in &unknown {
                p.err(Some(n), format!("unknown key `{k}`"));
            }
            p.err(None, format!("unknown keys: {}", names.join(", ")));
        }

        let anchor_line = p.line_of("anchor");
        let anchor: Option<DegradationKind> = p.get("anchor", None, |s| core(s.parse()).map(Some));
        let self_aux = p.get("self_auxiliary", false, |s| match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected true or false, got `{s}`")),
        });
        let aux_line = p.line_of("auxiliary");
        let auxiliary: Option<DegradationKind> = p.get("auxiliary", None, |s| core(s.parse()).map(Some));
        if anchor.is_none() && anchor_line.is_none() {
            p.err(None, "missing required key `anchor`");
        }
        let auxiliary = match (auxiliary, self_aux) {
            (None, true) => anchor,
            (None, false) => {
                if aux_line.is_none() {
                    p.err(None, "missing required key `auxiliary` (or set `self_auxiliary = true`)");
                }
                None
            }
            (Some(a), true) if Some(a) != anchor => {
                p.err(aux_line, "self_auxiliary = true requires auxiliary to equal anchor (or be omitted)");
                Some(a)
            }
            (Some(a), false) if Some(a) == anchor => {
                p.err(
                    aux_line,
                    "auxiliary equals anchor; set `self_auxiliary = true` to mix an independent draw of the anchor degradation",
                );
                Some(a)
            }
            (Some(a), _) => Some(a),
        };

        let prop_line = p.line_of("proportions");
        let proportions = p.get("proportions", DEFAULT_PROPORTIONS.to_vec(), list::<f64>);
        for &r in &proportions {
            if !(0.0..=1.0).contains(&r) {
                p.err(prop_line, format!("proportions: {r} is outside [0, 1]"));
            }
        }
        if proportions.is_empty() {
            p.err(prop_line, "proportions: list is empty");
        }
        let seed = p.get("seed", 0u64, num);
        let out = p.get("out", None, |s| Ok(Some(PathBuf::from(s))));
        let dataset_dir = p.get("dataset.dir", None, |s| Ok(Some(PathBuf::from(s))));

        let mut default_kinds = Vec::new();
        for k in [anchor, auxiliary].into_iter().flatten() {
            if !default_kinds.contains(&k) {
                default_kinds.push(k);
            }
        }
        let kinds_line = p.line_of("dataset.kinds");
        let kinds: Vec<DegradationKind> = p.get("dataset.kinds", default_kinds, |s| {
            s.split(',').map(|k| core(k.trim().parse())).collect()
        });
        for k in [anchor, auxiliary].into_iter().flatten() {
            if !kinds.contains(&k) {
                p.err(kinds_line, format!("dataset.kinds must include `{k}`"));
            }
        }
        let mut kind_configs = Vec::new();
        for &k in &kinds {
            let key = format!("degrade.{k}");
            let kc = p.get(&key, KindConfig::default_for(k), |s| core(format!("{k} {s}").parse()));
            kind_configs.push(kc);
        }
        for k in DegradationKind::ALL {
            let key = format!("degrade.{k}");
            if !kinds.contains(&k) {
                if let Some(line) = p.line_of(&key) {
                    p.err(Some(line), format!("`{key}` is set but `{k}` is not in dataset.kinds"));
                }
            }
        }
        let size = p.get("dataset.size", 24usize, num);
        let channels = p.get("dataset.channels", 1usize, num);
        let counts = SplitCounts {
            train: p.get("dataset.train", 200, num),
            val: p.get("dataset.val", 32, num),
            test: p.get("dataset.test", 32, num),
        };
        let dataset = DatasetSpec {
            kinds: kind_configs,
            counts,
            size,
            channels,
            seed,
        };
        let size_line = p.line_of("dataset.size");
        if size < 16 {
            p.err(size_line, format!("dataset.size: must be at least 16, got {size}"));
        }
        if channels != 1 && channels != 3 {
            let l = p.line_of("dataset.channels");
            p.err(l, format!("dataset.channels: must be 1 or 3, got {channels}"));
        }
        if let Err(e) = dataset.validate() {
            p.err(None, format!("dataset: {e}"));
        }

        let widths = p.get("model.widths", vec![16, 16], list::<usize>);
        let kernel = p.get("model.kernel", 3usize, num);
        let sgd = SgdConfig {
            learning_rate: p.get("sgd.lr", 0.1f32, num),
            steps: p.get("sgd.steps", 2500usize, num),
            batch_size: p.get("sgd.batch", 10usize, num),
        };
        let dri = DriConfig {
            carrier: p.get("dri.carrier", CarrierMode::Mixed, |s| core(s.parse())),
            schedule: p.get("dri.schedule", Schedule::EveryK(1), |s| core(s.parse())),
            loss_source: p.get("dri.loss", LossSource::Validation, |s| core(s.parse())),
            epsilon: p.get("dri.epsilon", DEFAULT_EPSILON, num),
            mixing: p.get("dri.mixing", MixingMode::Fixed, |s| core(s.parse())),
            sampling: p.get("dri.sampling", SamplingMode::WithReplacement, |s| core(s.parse())),
            ..DriConfig::new(sgd, proportions.first().copied().unwrap_or(0.0))
        };
        let eval_steps = p.get("sweep.eval_steps", 2500usize, num);

        let cfg = ExperimentConfig {
            anchor: anchor.unwrap_or(DegradationKind::Noise),
            auxiliary: auxiliary.unwrap_or(DegradationKind::Noise),
            self_auxiliary: self_aux,
            proportions,
            seed,
            out,
            dataset_dir,
            dataset,
            widths,
            kernel,
            dri,
            eval_steps,
        };
        if let Err(e) = cfg.model_config().validate() {
            let l = p.line_of("model.widths").or(p.line_of("model.kernel"));
            p.err(l, format!("model: {e}"));
        }
        for r in &cfg.proportions {
            let d = DriConfig {
                proportion: *r,
                ..cfg.dri.clone()
            };
            if let Err(e) = d.validate() {
                let l = p.line_of("dri.schedule").or(p.line_of("sgd.steps"));
                p.err(l, format!("dri: {e}"));
                break;
            }
        }
        if p.diags.is_empty() {
            Ok(cfg)
        } else {
            p.diags.sort_by_key(|d| d.line.unwrap_or(usize::MAX));
            Err(Diagnostics(p.diags))
        }
    }

    pub fn load(path: &Path) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| degrel_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        ExperimentConfig::parse(&text).map_err(|d| crate::CliError::Config {
            path: path.to_path_buf(),
            diagnostics: d,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            widths: self.widths.clone(),
            kernel_size: self.kernel,
            ..ModelConfig::desk(self.dataset.channels, self.seed)
        }
    }

    /// The DRI settings for one proportion.
    pub fn dri_config(&self, r: f64) -> DriConfig {
        DriConfig {
            proportion: r,
            ..self.dri.clone()
        }
    }

    /// Canonical `key = value` lines for every setting that affects results.
    /// Output locations are left out so artifacts do not depend on them.
    pub fn echo(&self) -> Vec<String> {
        let join = |v: &[String]| v.join(",");
        let mut lines = vec![
            format!("anchor = {}", self.anchor),
            format!("auxiliary = {}", self.auxiliary),
            format!("self_auxiliary = {}", self.self_auxiliary),
            format!(
                "proportions = {}",
                join(&self.proportions.iter().map(|r| r.to_string()).collect::<Vec<_>>())
            ),
            format!("seed = {}", self.seed),
            format!(
                "dataset.kinds = {}",
                join(&self.dataset.kinds.iter().map(|k| k.kind().to_string()).collect::<Vec<_>>())
            ),
            format!("dataset.size = {}", self.dataset.size),
            format!("dataset.channels = {}", self.dataset.channels),
            format!("dataset.train = {}", self.dataset.counts.train),
            format!("dataset.val = {}", self.dataset.counts.val),
            format!("dataset.test = {}", self.dataset.counts.test),
        ];
        for kc in &self.dataset.kinds {
            let text = kc.to_string();
            let fields = text.split_once(' ').map(|x| x.1).unwrap_or("");
            lines.push(format!("degrade.{} = {fields}", kc.kind()));
        }
        lines.push(format!(
            "model.widths = {}",
            join(&self.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>())
        ));
        lines.push(format!("model.kernel = {}", self.kernel));
        lines.extend(
            self.dri
                .echo()
                .into_iter()
                .filter(|l| !l.starts_with("proportion ")),
        );
        lines.push(format!("sweep.eval_steps = {}", self.eval_steps));
        lines
    }

    /// Output root: `--out`, then the `out` key, then `$DEGREL_OUT`, then `.`.
    pub fn out_root(&self, flag: Option<&Path>, env: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .or_else(|| env.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn dataset_root(&self, out_root: &Path) -> PathBuf {
        self.dataset_dir.clone().unwrap_or_else(|| out_root.join("dataset"))
    }
}
