use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use degrel_core::analysis::{parse_sweep_csv, sweep_csv};
use degrel_core::dri::DriTrace;

const BASE: &str = "\
anchor = haze
auxiliary = noise
seed = 5
dataset.size = 16
dataset.train = 12
dataset.val = 4
dataset.test = 4
model.widths = 4,4
sgd.lr = 0.05
sgd.steps = 12
sgd.batch = 4
sweep.eval_steps = 6
";

fn degrel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degrel"))
        .args(args)
        .current_dir(dir)
        .env_remove("DEGREL_OUT")
        .output()
        .expect("binary runs")
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, format!("{BASE}{extra}")).unwrap();
    (dir, cfg)
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = degrel(dir, args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn hash_tree(root: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = Sha256::digest(fs::read(&p).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.push((p.strip_prefix(root).unwrap().display().to_string(), hex));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_counts_refuses_and_regenerates_identically() {
    let (dir, cfg) = setup("dataset.kinds = noise,haze,rain,snow\n");
    let cfg = cfg.to_str().unwrap();
    run_ok(dir.path(), &["synth", "--config", cfg, "--out", "o"]);
    let root = dir.path().join("o/dataset");
    let count = |sub: &str| fs::read_dir(root.join(sub)).unwrap().count();
    assert_eq!(count("clean"), 20);
    let degraded: usize = ["noise", "haze", "rain", "snow"].iter().map(|k| count(k)).sum();
    assert_eq!(degraded, 80);
    assert!(root.join("manifest.txt").is_file());
    let first = hash_tree(&root);

    let again = degrel(dir.path(), &["synth", "--config", cfg, "--out", "o"]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    fs::remove_dir_all(&root).unwrap();
    run_ok(dir.path(), &["synth", "--config", cfg, "--out", "o"]);
    assert_eq!(hash_tree(&root), first);

    run_ok(dir.path(), &["synth", "--config", cfg, "--out", "o", "--force"]);
    assert_eq!(hash_tree(&root), first);
}

#[test]
fn dpd_at_zero_is_neutral_with_exit_one() {
    let (dir, cfg) = setup("");
    let cfg = cfg.to_str().unwrap();
    run_ok(dir.path(), &["synth", "--config", cfg, "--out", "o"]);
    let out = degrel(dir.path(), &["dpd", "--config", cfg, "--out", "o", "--proportion", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let text = fs::read_to_string(dir.path().join("o/dpd/decision.txt")).unwrap();
    assert!(text.contains("neutral = true"), "{text}");
    assert!(text.contains("beneficial = false"));
    let trace = DriTrace::read(&dir.path().join("o/dpd/trace.csv")).unwrap();
    assert!(trace.records.iter().all(|r| r.d_t == 0.0));
}

#[test]
fn sweep_writes_six_rows_and_is_reproducible() {
    let (dir, cfg) = setup("");
    let cfg = cfg.to_str().unwrap();
    run_ok(dir.path(), &["synth", "--config", cfg, "--out", "a"]);
    run_ok(dir.path(), &["synth", "--config", cfg, "--out", "b"]);
    let summary = run_ok(dir.path(), &["sweep", "--config", cfg, "--out", "a"]);
    assert!(summary.contains("carrier: mixed"));
    run_ok(dir.path(), &["sweep", "--config", cfg, "--out", "b", "--jobs", "2"]);
    let a = hash_tree(&dir.path().join("a/sweep"));
    assert_eq!(a, hash_tree(&dir.path().join("b/sweep")));
    assert_eq!(a.len(), 8); // sweep.csv, summary.txt, six traces

    let text = fs::read_to_string(dir.path().join("a/sweep/sweep.csv")).unwrap();
    let parsed = parse_sweep_csv(&text).unwrap();
    assert_eq!(parsed.rows.len(), 6);
    assert_eq!(parsed.rows[0].r, 0.0);
    assert_eq!(parsed.rows[0].dri, 0.0);
    assert_eq!(sweep_csv(&parsed), text);
    assert!(text.starts_with("# anchor = haze\n"));

    let before = fs::read(dir.path().join("a/sweep/summary.txt")).unwrap();
    run_ok(dir.path(), &["report", "--config", cfg, "--out", "a"]);
    assert_eq!(fs::read(dir.path().join("a/sweep/summary.txt")).unwrap(), before);
}

#[test]
fn dri_trace_carries_echo_and_round_trips() {
    let (dir, cfg) = setup("dri.schedule = every:3\n");
    let cfg = cfg.to_str().unwrap();
    run_ok(dir.path(), &["synth", "--config", cfg, "--out", "o"]);
    run_ok(dir.path(), &["dri", "--config", cfg, "--out", "o", "--proportion", "0.5"]);
    let text = fs::read_to_string(dir.path().join("o/dri/trace.csv")).unwrap();
    let trace = DriTrace::parse_csv(&text).unwrap();
    assert_eq!(trace.to_csv(), text);
    assert_eq!(trace.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 4, 7, 10]);
    assert!(trace.echo.contains(&"proportion = 0.5".to_string()));
    assert!(trace.echo.contains(&"dri.schedule = every:3".to_string()));
}

#[test]
fn validate_reports_diagnostics() {
    let (dir, cfg) = setup("");
    let ok = run_ok(dir.path(), &["validate", "--config", cfg.to_str().unwrap()]);
    assert!(ok.contains("configuration is valid"));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "anchor = noise\nauxiliary = noise\nproportions = 1.2\nwhat = 1\n").unwrap();
    let out = degrel(dir.path(), &["validate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("self_auxiliary"), "{err}");
    assert!(err.contains("line 3") && err.contains("outside [0, 1]"), "{err}");
    assert!(err.contains("unknown keys: what"), "{err}");
}

#[test]
fn missing_dataset_names_path() {
    let (dir, cfg) = setup("");
    let out = degrel(dir.path(), &["dri", "--config", cfg.to_str().unwrap(), "--out", "nowhere", "--proportion", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere/dataset/manifest.txt"), "{err}");
}

#[test]
fn out_root_from_environment() {
    let (dir, cfg) = setup("");
    let out = Command::new(env!("CARGO_BIN_EXE_degrel"))
        .args(["synth", "--config", cfg.to_str().unwrap()])
        .current_dir(dir.path())
        .env("DEGREL_OUT", dir.path().join("env-root"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("env-root/dataset/manifest.txt").is_file());
}
