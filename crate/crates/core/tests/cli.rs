//! The `kinalign` binary end to end: exit codes, outputs and reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn kinalign(args: &[&str]) -> Output {
    kinalign_threads(args, 1)
}

fn kinalign_threads(args: &[&str], threads: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinalign"))
        .args(args)
        .env("KINALIGN_THREADS", threads.to_string())
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn gen(dir: &Path, name: &str, frames: usize, error_deg: f64, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let res = kinalign(&["gen", "--frames", &frames.to_string(), "--error-deg", &error_deg.to_string(), "--seed", &seed.to_string(), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out.join("manifest.json")
}

/// A short run keeps the optimized cases cheap.
fn short_config(dir: &Path, max_iters: usize) -> PathBuf {
    let path = dir.join("short.json");
    fs::write(&path, format!(r#"{{"optimizer": {{"max_iters": {max_iters}}}}}"#)).unwrap();
    path
}

#[test]
fn gen_writes_requested_frames_and_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", 3, 1.5, 7);
    let b = gen(dir.path(), "b", 3, 1.5, 7);
    let manifest = read_json(&a);
    let frames = manifest["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 3);
    assert_eq!(manifest["frames"], read_json(&b)["frames"]);
    for f in frames {
        let mask = f["mask"].as_str().unwrap();
        assert_eq!(fs::read(dir.path().join("a").join(mask)).unwrap(), fs::read(dir.path().join("b").join(mask)).unwrap());
    }
    assert!(dir.path().join("a/effective_config.json").is_file());
    assert!(dir.path().join("a/run.log").is_file());
}

#[test]
fn no_optim_at_zero_error_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), "data", 2, 0.0, 1);
    let out = dir.path().join("raw");
    let res = kinalign(&["align", "--no-optim", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let results = read_json(&out.join("results.json"));
    for f in results["frames"].as_array().unwrap() {
        assert_eq!(f["record"]["dice_final"].as_f64(), Some(1.0));
        assert_eq!(f["record"]["mae_final_deg"].as_f64(), Some(0.0));
        assert!(f["loss_trace"].as_array().unwrap().is_empty());
    }
    for name in ["records.csv", "summary.json", "summary.txt", "run.log", "effective_config.json"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }

    let eval = kinalign(&["eval", "--manifest", p(&manifest), "--results", p(&out.join("results.json"))]);
    assert_eq!(code(&eval), 0);
}

#[test]
fn align_is_idempotent_across_thread_counts_and_traces_stay_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), "data", 2, 1.0, 5);
    let max_iters = 8;
    let cfg = short_config(dir.path(), max_iters);
    let run = |name: &str, threads: usize| {
        let out = dir.path().join(name);
        let res = kinalign_threads(&["align", "--config", p(&cfg), "--manifest", p(&manifest), "--out", p(&out)], threads);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let first = run("one", 1);
    let second = run("two", 2);
    assert_eq!(fs::read(first.join("results.json")).unwrap(), fs::read(second.join("results.json")).unwrap());

    let results = read_json(&first.join("results.json"));
    for f in results["frames"].as_array().unwrap() {
        let trace = f["loss_trace"].as_array().unwrap();
        assert!(!trace.is_empty() && trace.len() <= max_iters + 1);
        let best = f["best_loss"].as_f64().unwrap();
        assert!(trace.iter().all(|v| v.as_f64().unwrap() >= best));
        assert!(first.join(f["mask"].as_str().unwrap()).is_file());
        assert!(first.join(f["soft_mask"].as_str().unwrap()).is_file());
    }
}

#[test]
fn exit_codes_separate_config_io_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    // unknown domain and bad frame count are configuration errors
    assert_eq!(code(&kinalign(&["gen", "--domain", "fog", "--out", p(&out)])), 2);
    assert_eq!(code(&kinalign(&["gen", "--frames", "0", "--out", p(&out)])), 2);
    // malformed command line
    assert_eq!(code(&kinalign(&["gen"])), 2);
    assert_eq!(code(&kinalign(&["frobnicate"])), 2);
    // missing input file
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&kinalign(&["align", "--manifest", p(&missing), "--out", p(&out)])), 3);
    // unknown config key
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"optimiser": {}}"#).unwrap();
    assert_eq!(code(&kinalign(&["gen", "--config", p(&bad), "--out", p(&out)])), 2);

    let threads = Command::new(env!("CARGO_BIN_EXE_kinalign"))
        .args(["gen", "--out", p(&out)])
        .env("KINALIGN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
    assert_eq!(code(&kinalign(&["--help"])), 0);
}
