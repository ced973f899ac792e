//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Artifacts land in `$CARGO_TARGET_TMPDIR/acceptance`.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use degrel_core::analysis::{make_report, parse_sweep_csv, pearson, proportion_sweep, psnr, ssim, sweep_csv, SweepOutcome};
use degrel_core::degrade::{apply_noise, KindConfig, SplitCounts};
use degrel_core::dri::{dri_on_training_loss, dri_step, run_dri, schedule_filter, Learner};
use degrel_core::rng::mix64;
use degrel_core::{
    build_paired_dataset, init_model, CarrierMode, DatasetSpec, DegradationKind, DriConfig, DriInputs, DriTrace,
    ModelConfig, ModelParams, PairedDataset, Schedule, SgdConfig, Split, Tensor,
};

const SEEDS: [u64; 3] = [1, 2, 3];
const NOISE_LR: f32 = 0.1;
// Anchor-only haze steps overshoot at 0.1 on some seeds.
const HAZE_LR: f32 = 0.05;
const BATCH: usize = 10;
const RATIOS: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn artifacts() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn desk_dataset(seed: u64, kinds: &[DegradationKind]) -> PairedDataset {
    build_paired_dataset(&DatasetSpec {
        kinds: kinds.iter().map(|&k| KindConfig::default_for(k)).collect(),
        counts: SplitCounts { train: 200, val: 32, test: 32 },
        size: 24,
        channels: 1,
        seed,
    })
    .unwrap()
}

fn desk_model(seed: u64) -> ModelParams {
    init_model(&ModelConfig::desk(1, seed)).unwrap()
}

fn desk_config(lr: f32, steps: usize) -> DriConfig {
    DriConfig::new(
        SgdConfig {
            learning_rate: lr,
            steps,
            batch_size: BATCH,
        },
        0.0,
    )
}

fn inputs<'a>(ds: &'a PairedDataset, anchor: DegradationKind, aux: &'a [degrel_core::ImagePair]) -> DriInputs<'a> {
    DriInputs {
        anchor_train: ds.pairs(anchor, Split::Train).unwrap(),
        aux_train: aux,
        anchor_val: ds.pairs(anchor, Split::Val).unwrap(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn within(elapsed: Duration, limit_s: u64) -> (bool, String) {
    (elapsed.as_secs() < limit_s, format!("{:.1}s of {limit_s}s", elapsed.as_secs_f64()))
}

fn identity() -> Verdict {
    let start = Instant::now();
    let kinds = [
        DegradationKind::Noise,
        DegradationKind::Haze,
        DegradationKind::Rain,
        DegradationKind::Snow,
        DegradationKind::Adversarial,
    ];
    let carriers = [CarrierMode::Mixed, CarrierMode::Anchor, CarrierMode::Dual];
    let widths = [vec![4, 4], vec![8], vec![16, 16]];
    let mut ok = true;
    let mut notes = Vec::new();
    for i in 0..3u64 {
        let h = mix64(0xacce_0000 + i);
        let seed = h % 1000;
        let anchor = kinds[(h >> 10) as usize % 4];
        let aux = kinds[((h >> 10) as usize % 4 + 1 + (h >> 14) as usize % 4) % 5];
        let channels = if (h >> 20) & 1 == 0 { 1 } else { 3 };
        let schedule = match (h >> 24) % 4 {
            0 => Schedule::EveryK(1 + (h >> 28) as usize % 4),
            1 => Schedule::First(0.3),
            2 => Schedule::Middle(0.5),
            _ => Schedule::Final(0.25),
        };
        let carrier = carriers[(h >> 32) as usize % 3];
        let ds = build_paired_dataset(&DatasetSpec {
            kinds: [anchor, aux].iter().map(|&k| KindConfig::default_for(k)).collect(),
            counts: SplitCounts { train: 20, val: 6, test: 4 },
            size: 16,
            channels,
            seed,
        })
        .unwrap();
        let model = init_model(&ModelConfig {
            widths: widths[(h >> 36) as usize % 3].clone(),
            zero_final: (h >> 40) & 1 == 0,
            ..ModelConfig::desk(channels, seed)
        })
        .unwrap();
        let cfg = DriConfig {
            schedule,
            carrier,
            ..DriConfig::new(
                SgdConfig {
                    learning_rate: 0.05,
                    steps: 40,
                    batch_size: 4,
                },
                0.0,
            )
        };
        let res = run_dri(&model, &inputs(&ds, anchor, ds.pairs(aux, Split::Train).unwrap()), &cfg, seed)
            .unwrap()
            .result;
        let zero = res.dri.to_bits() == 0 && res.trace.records.iter().all(|r| r.d_t.to_bits() == 0);
        ok &= zero && !res.trace.records.is_empty();
        notes.push(format!("{anchor}/{aux} {channels}ch {schedule} {carrier}: {} records", res.trace.records.len()));
    }
    let (fast, t) = within(start.elapsed(), 60);
    verdict(ok && fast, format!("{}; {t}", notes.join("; ")))
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let errs = support::gradient_suite();
    let (name, worst) = errs
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    let (fast, t) = within(start.elapsed(), 60);
    verdict(
        worst < 1e-4 && fast,
        format!("{} checks, max relative error {worst:.2e} ({name}); {t}", errs.len()),
    )
}

#[derive(Clone)]
struct Line(f64);

impl Learner for Line {
    type Batch = Vec<(f64, f64)>;

    fn updated(&self, batch: &Self::Batch, lr: f64) -> degrel_core::Result<Self> {
        let g = batch.iter().map(|&(x, y)| 2.0 * x * (self.0 * x - y)).sum::<f64>() / batch.len() as f64;
        Ok(Line(self.0 - lr * g))
    }

    fn loss(&self, set: &Self::Batch) -> degrel_core::Result<f64> {
        Ok(set.iter().map(|&(x, y)| (self.0 * x - y).powi(2)).sum::<f64>() / set.len() as f64)
    }
}

fn hand_oracle() -> Verdict {
    // θ = 0, lr 0.1, probe {(1, 1)}: anchor {(1, 1)} moves θ to 0.2 (loss
    // 0.64); mixed {(1, 1), (1, -1)} has zero mean gradient (loss 1).
    let expected = (0.64 - 1.0) / 1.0;
    let out = dri_step(&Line(0.0), &vec![(1.0, 1.0)], &vec![(1.0, 1.0), (1.0, -1.0)], &vec![(1.0, 1.0)], 0.1, 1e-12)
        .unwrap();
    verdict((out.d_t - expected).abs() < 1e-9, format!("D_t = {} (expected {expected})", out.d_t))
}

struct Adversarial {
    dri: Vec<f64>,
}

fn adversarial(traces: &mut Vec<(String, DriTrace)>) -> (Verdict, Adversarial) {
    let start = Instant::now();
    let mut ok = true;
    let mut dri = Vec::new();
    let mut notes = Vec::new();
    for seed in SEEDS {
        let ds = desk_dataset(seed, &[DegradationKind::Noise, DegradationKind::Adversarial]);
        let inp = inputs(&ds, DegradationKind::Noise, ds.pairs(DegradationKind::Adversarial, Split::Train).unwrap());
        let test = ds.pairs(DegradationKind::Noise, Split::Test).unwrap();
        let out = proportion_sweep(&desk_model(seed), &inp, test, &[0.0, 0.3], &desk_config(NOISE_LR, 1500), 0, seed, &|_| {})
            .unwrap();
        let row = out.result.rows[1];
        ok &= row.dri < 0.0 && row.delta_psnr < 0.0;
        dri.push(row.dri);
        notes.push(format!("seed {seed} DRI {:.4} dPSNR {:.2}", row.dri, row.delta_psnr));
        traces.push((format!("adversarial seed {seed}"), out.runs[1].dri.trace.clone()));
    }
    let (fast, t) = within(start.elapsed(), 600);
    (verdict(ok && fast, format!("{}; {t}", notes.join(", "))), Adversarial { dri })
}

fn self_auxiliary(adv: Option<&Adversarial>) -> Verdict {
    let start = Instant::now();
    let Some(adv) = adv else {
        return verdict(false, "adversarial reference unavailable".into());
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, seed) in SEEDS.into_iter().enumerate() {
        let ds = desk_dataset(seed, &[DegradationKind::Noise]);
        let redraw = ds.redraw(DegradationKind::Noise, Split::Train, 1).unwrap();
        let cfg = DriConfig {
            proportion: 0.1,
            ..desk_config(NOISE_LR, 1500)
        };
        let res = run_dri(&desk_model(seed), &inputs(&ds, DegradationKind::Noise, &redraw), &cfg, seed)
            .unwrap()
            .result;
        let bound = 0.25 * adv.dri[i].abs();
        ok &= res.dri.abs() < bound;
        notes.push(format!("seed {seed} |DRI| {:.2e} < {bound:.2e}", res.dri.abs()));
    }
    let (fast, t) = within(start.elapsed(), 600);
    verdict(ok && fast, format!("{}; {t}", notes.join(", ")))
}

struct Trend {
    sweeps: Vec<(u64, SweepOutcome)>,
    train_dri: Vec<f64>,
    elapsed: Duration,
}

fn trend_runs() -> Trend {
    let start = Instant::now();
    let mut sweeps = Vec::new();
    let mut train_dri = Vec::new();
    for seed in SEEDS {
        let ds = desk_dataset(seed, &[DegradationKind::Haze, DegradationKind::Noise]);
        let inp = inputs(&ds, DegradationKind::Haze, ds.pairs(DegradationKind::Noise, Split::Train).unwrap());
        let test = ds.pairs(DegradationKind::Haze, Split::Test).unwrap();
        let model = desk_model(seed);
        let cfg = desk_config(HAZE_LR, 2500);
        let out = proportion_sweep(&model, &inp, test, &RATIOS, &cfg, 2500, seed, &|_| {}).unwrap();
        let train = dri_on_training_loss(&model, &inp, &DriConfig { proportion: 0.1, ..cfg }, seed)
            .unwrap()
            .result
            .dri;
        let val = out.result.rows[1].dri;
        let dir = artifacts().join(format!("haze_seed{seed}"));
        let traces: Vec<(f64, &DriTrace)> = out.runs.iter().map(|r| (r.r, &r.dri.trace)).collect();
        let extra = vec![
            format!("r=0.1 training-loss DRI: {train}"),
            format!("r=0.1 validation-loss DRI: {val}"),
            format!("r=0.1 divergence: {}", train - val),
        ];
        make_report(&out.result, &traces, &dir, &extra).unwrap();
        train_dri.push(train);
        sweeps.push((seed, out));
    }
    Trend {
        sweeps,
        train_dri,
        elapsed: start.elapsed(),
    }
}

fn proportion_trend(trend: &Trend) -> Verdict {
    let nonzero = &RATIOS[1..];
    let per_r = |f: &dyn Fn(&degrel_core::SweepRow) -> f64| -> Vec<f64> {
        (1..RATIOS.len())
            .map(|i| mean(&trend.sweeps.iter().map(|(_, s)| f(&s.result.rows[i])).collect::<Vec<_>>()))
            .collect()
    };
    let dri = per_r(&|r| r.dri);
    let dpsnr = per_r(&|r| r.delta_psnr);
    let monotone = dri.windows(2).all(|w| w[1] <= w[0]);
    let corr = pearson(&dri, &dpsnr);
    let corr_ok = matches!(corr, Ok(c) if c >= 0.6);
    let (fast, t) = within(trend.elapsed, 45 * 60);
    let rows: Vec<String> = nonzero
        .iter()
        .zip(dri.iter().zip(&dpsnr))
        .map(|(r, (d, p))| format!("r={r}: DRI {d:.4} dPSNR {p:.3}"))
        .collect();
    verdict(
        monotone && corr_ok && fast,
        format!("{}; monotone {monotone}; pearson {corr:?}; {t}", rows.join(", ")),
    )
}

fn schedule_ablation(trend: &Trend) -> Verdict {
    let steps = 2500;
    let window = schedule_filter(Schedule::First(0.3), steps).unwrap();
    let mut agree = 0;
    let mut cells = 0;
    for (_, sweep) in &trend.sweeps {
        for run in sweep.runs.iter().filter(|r| r.r > 0.0) {
            let early = run.dri.trace.dri_over(&window).unwrap();
            cells += 1;
            if early.signum() == run.dri.dri.signum() {
                agree += 1;
            }
        }
    }
    let sign_ok = agree * 10 >= cells * 8;

    // Replay: sparse runs on the first seed reproduce the dense records.
    let (seed, dense) = &trend.sweeps[0];
    let ds = desk_dataset(*seed, &[DegradationKind::Haze, DegradationKind::Noise]);
    let inp = inputs(&ds, DegradationKind::Haze, ds.pairs(DegradationKind::Noise, Split::Train).unwrap());
    let model = desk_model(*seed);
    let mut replay_ok = true;
    let (mut dense_bk, mut sparse_bk) = (Duration::ZERO, Duration::ZERO);
    for run in dense.runs.iter().filter(|r| r.r > 0.0) {
        let cfg = DriConfig {
            proportion: run.r,
            schedule: Schedule::First(0.3),
            ..desk_config(HAZE_LR, steps)
        };
        let sparse = run_dri(&model, &inp, &cfg, *seed).unwrap().result;
        let dense_trace = &run.dri.trace;
        replay_ok &= sparse.trace.records.iter().map(|r| r.step).eq(window.iter().copied());
        replay_ok &= sparse.trace.records.iter().all(|r| r == &dense_trace.records[r.step - 1]);
        replay_ok &= sparse.dri.to_bits() == dense_trace.dri_over(&window).unwrap().to_bits();
        dense_bk += run.dri.timing.bookkeeping;
        sparse_bk += sparse.timing.bookkeeping;
    }
    let speedup = dense_bk.as_secs_f64() / sparse_bk.as_secs_f64();
    verdict(
        sign_ok && replay_ok && speedup >= 2.0,
        format!(
            "first-30% sign agrees in {agree}/{cells} cells; bitwise replay {replay_ok}; bookkeeping {dense_bk:.2?} vs {sparse_bk:.2?} ({speedup:.2}x)"
        ),
    )
}

fn training_loss(trend: &Trend) -> Verdict {
    let val: Vec<f64> = trend.sweeps.iter().map(|(_, s)| s.result.rows[1].dri).collect();
    let train = &trend.train_dri;
    let gap = (mean(train) - mean(&val)).abs();
    let floor = sample_std(train).max(sample_std(&val));
    verdict(
        gap > floor,
        format!(
            "training-loss DRI {train:.4?} (mean {:.4}), validation-loss DRI {val:.4?} (mean {:.4}); divergence {gap:.4} vs noise floor {floor:.4}",
            mean(train),
            mean(&val)
        ),
    )
}

fn metric_oracles() -> Verdict {
    let start = Instant::now();
    let mut worst_ssim = 0.0f64;
    let mut worst_psnr = 0.0f64;
    for (c, h, w, pa, pb, s, p, s_inv) in support::FIXTURES {
        let x = support::pattern(c, h, w, pa);
        let y = support::pattern(c, h, w, pb);
        let inv = x.map(|v| 1.0 - v);
        worst_ssim = worst_ssim.max((ssim(&x, &y).unwrap() - s).abs());
        worst_ssim = worst_ssim.max((ssim(&x, &inv).unwrap() - s_inv).abs());
        worst_psnr = worst_psnr.max((psnr(&x, &y, 1.0).unwrap() - p).abs());
    }
    let (x, y, s, p) = support::smooth_fixture();
    worst_ssim = worst_ssim.max((ssim(&x, &y).unwrap() - s).abs());
    worst_psnr = worst_psnr.max((psnr(&x, &y, 1.0).unwrap() - p).abs());

    // MSE of clipped N(0, 15/255) noise at 0.5 is sigma^2 to within 1e-6.
    let closed = 20.0 * (255.0f64 / 15.0).log10();
    let gray = Tensor::full(&[1, 128, 128], 0.5).unwrap();
    let pair = apply_noise(&gray, 15.0, 9).unwrap();
    let measured = psnr(&pair.degraded, &pair.clean, 1.0).unwrap();
    let (fast, t) = within(start.elapsed(), 60);
    verdict(
        worst_ssim < 1e-4 && worst_psnr < 1e-6 && (measured - 24.6).abs() < 0.5 && (closed - 24.6).abs() < 0.5 && fast,
        format!(
            "max |SSIM err| {worst_ssim:.1e}, max |PSNR err| {worst_psnr:.1e}; noise PSNR {measured:.3} (closed form {closed:.3}); {t}"
        ),
    )
}

const CLI_CONFIG: &str = "\
anchor = noise
auxiliary = adversarial
proportions = 0, 0.3
seed = 1
dataset.size = 24
dataset.train = 200
dataset.val = 32
dataset.test = 32
sgd.lr = 0.1
sgd.steps = 300
sgd.batch = 10
sweep.eval_steps = 100
";

fn degrel(dir: &Path, args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_degrel"))
        .args(args)
        .current_dir(dir)
        .env_remove("DEGREL_OUT")
        .output()
        .unwrap();
    if !out.status.success() {
        eprintln!("degrel {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = fs::read_dir(&d) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                found.push(p);
            }
        }
    }
    found.sort();
    found
}

fn round_trips(path: &Path) -> bool {
    let text = fs::read_to_string(path).unwrap();
    if path.file_name().is_some_and(|n| n == "sweep.csv") {
        parse_sweep_csv(&text).is_ok_and(|s| sweep_csv(&s) == text)
    } else {
        DriTrace::parse_csv(&text).is_ok_and(|t| t.to_csv() == text)
    }
}

fn determinism(traces: &[(String, DriTrace)]) -> Verdict {
    let start = Instant::now();
    let root = artifacts().join("cli");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();
    fs::write(root.join("exp.cfg"), CLI_CONFIG).unwrap();
    let mut ran = true;
    for out in ["a", "b"] {
        ran &= degrel(&root, &["synth", "--config", "exp.cfg", "--out", out]);
        ran &= degrel(&root, &["sweep", "--config", "exp.cfg", "--out", out]);
        ran &= degrel(&root, &["dri", "--config", "exp.cfg", "--out", out, "--proportion", "0.3"]);
    }
    let a = csv_files(&root.join("a"));
    let b = csv_files(&root.join("b"));
    let identical = a.len() == b.len()
        && !a.is_empty()
        && a.iter().zip(&b).all(|(x, y)| {
            x.strip_prefix(root.join("a")).ok() == y.strip_prefix(root.join("b")).ok()
                && fs::read(x).unwrap() == fs::read(y).unwrap()
        });
    let manifest = fs::read(root.join("a/dataset/manifest.txt")).ok() == fs::read(root.join("b/dataset/manifest.txt")).ok();

    let all = csv_files(&artifacts());
    let bad: Vec<_> = all.iter().filter(|p| !round_trips(p)).collect();
    let memory_ok = traces
        .iter()
        .all(|(_, t)| DriTrace::parse_csv(&t.to_csv()).is_ok_and(|p| &p == t));
    let (fast, t) = within(start.elapsed(), 300);
    verdict(
        ran && identical && manifest && bad.is_empty() && memory_ok && fast,
        format!(
            "{} CLI CSVs byte-identical across reruns: {identical}; {} CSVs round-trip, failures {bad:?}; in-memory traces {memory_ok}; {t}",
            a.len(),
            all.len()
        ),
    )
}

fn guarded<T>(f: impl FnOnce() -> T) -> Option<T> {
    catch_unwind(AssertUnwindSafe(f)).ok()
}

fn report(id: u8, name: &str, v: Option<Verdict>, failures: &mut u32) {
    let v = v.unwrap_or_else(|| verdict(false, "panicked".into()));
    if !v.pass {
        *failures += 1;
    }
    println!("criterion {id:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn main() {
    let _ = fs::remove_dir_all(artifacts());
    fs::create_dir_all(artifacts()).unwrap();
    let mut failures = 0;
    let mut traces = Vec::new();

    report(1, "r=0 identity", guarded(identity), &mut failures);
    report(2, "gradient correctness", guarded(gradients), &mut failures);
    report(3, "hand-computed D_t", guarded(hand_oracle), &mut failures);

    let adv = guarded(|| adversarial(&mut traces));
    let (v4, adv) = match adv {
        Some((v, a)) => (Some(v), Some(a)),
        None => (None, None),
    };
    report(4, "adversarial auxiliary is harmful", v4, &mut failures);
    report(5, "self auxiliary is near neutral", guarded(|| self_auxiliary(adv.as_ref())), &mut failures);

    let trend = guarded(trend_runs);
    if let Some(t) = &trend {
        for (seed, s) in &t.sweeps {
            for run in &s.runs {
                traces.push((format!("haze seed {seed} r {}", run.r), run.dri.trace.clone()));
            }
        }
    }
    let with_trend = |f: fn(&Trend) -> Verdict| trend.as_ref().and_then(|t| guarded(|| f(t)));
    report(6, "proportion trend", with_trend(proportion_trend), &mut failures);
    report(7, "schedule ablation", with_trend(schedule_ablation), &mut failures);
    report(8, "training-loss ablation", with_trend(training_loss), &mut failures);

    report(9, "metric oracles", guarded(metric_oracles), &mut failures);
    report(10, "determinism and formats", guarded(|| determinism(&traces)), &mut failures);

    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
