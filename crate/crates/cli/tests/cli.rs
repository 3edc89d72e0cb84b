use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tokenunify::seg_metrics::LabelVolume;
use tokenunify::token_core::{load_corpus, Volume};

fn tu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tu"))
        .args(args)
        .env_remove("TU_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(stdout.lines().count(), 1, "stdout must be one line: {stdout}");
    serde_json::from_str(&stdout).unwrap()
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn metrics_on_identical_volumes_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("a.emseg");
    let labels: Vec<u32> = (0..2 * 3 * 4).map(|i| i % 5).collect();
    LabelVolume::new([2, 3, 4], labels)
        .unwrap()
        .write_to(std::fs::File::create(&vol).unwrap())
        .unwrap();
    let v = dir_str(&vol);
    let out = tu(&["metrics", "--pred", v, "--gt", v, "--out-dir", dir_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["voi"], 0.0);
    assert_eq!(s["arand"], 0.0);
    assert!(dir.path().join("metrics.json").exists());
}

#[test]
fn schedule_prints_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = tu(&["schedule", "--t", "0", "--config", "default", "--out-dir", dir_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let w = summary(&out)["weights"].clone();
    let e = [2f64.exp(), (-1f64).exp(), (-2f64).exp()];
    let z: f64 = e.iter().sum();
    for i in 0..3 {
        assert!((w[i].as_f64().unwrap() - e[i] / z).abs() < 1e-12);
    }
    let echo = std::fs::read_to_string(dir.path().join("schedule.config")).unwrap();
    assert!(echo.contains("t = 0\n") && echo.contains("total_iters = 1000\n"));
}

#[test]
fn config_errors_exit_one_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "trials = 10\ntrails = 3\n").unwrap();
    let out_dir = dir.path().join("out");
    let o = dir_str(&out_dir);
    for args in [
        vec!["err-accum", "--config", dir_str(&cfg), "--out-dir", o],
        vec!["err-accum", "--trials", "ten", "--out-dir", o],
        vec!["err-accum", "--seed", "-1", "--out-dir", o],
        vec!["schedule", "--t", "1000", "--out-dir", o],
        vec!["metrics", "--pred", "/nonexistent.emseg", "--gt", "/nonexistent.emseg", "--out-dir", o],
        vec!["no-such-command"],
    ] {
        let out = tu(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    assert!(!out_dir.exists(), "failed runs must not leave files behind");
}

#[test]
fn criteria_failure_exits_two_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = tu(&["err-accum", "--trials", "200", "--k-grid", "4,16", "--out-dir", dir_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let s = summary(&out);
    assert_eq!(s["status"], "fail");
    assert_eq!(s["failures"][0], "naive_within_5pct_of_k_sigma2");
    assert!(dir.path().join("err-accum.report.json").exists());
}

#[test]
fn reports_are_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small grid\nk_grid = 4, 8\ntrials = 300\nseed = 11\n").unwrap();
    let read = |sub: &str| {
        let out_dir = dir.path().join(sub);
        std::fs::read(out_dir.join("err-accum.report.json")).unwrap()
    };
    for (sub, workers) in [("a", "1"), ("b", "3")] {
        let out_dir = dir.path().join(sub);
        let out = tu(&["err-accum", "--config", dir_str(&cfg), "--workers", workers, "--out-dir", dir_str(&out_dir)]);
        assert!(out.status.code() == Some(0) || out.status.code() == Some(2));
        assert!(out_dir.join("err-accum.meta.json").exists());
    }
    assert_eq!(read("a"), read("b"));
}

#[test]
fn out_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tu"))
        .args(["resampler-check", "--seed", "4"])
        .env("TU_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("resampler-check.report.json").exists());
}

#[test]
fn tokenize_then_pretrain_on_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let mut inputs = Vec::new();
    for k in 0..3 {
        let path = dir.path().join(format!("v{k}.emvol"));
        let data: Vec<f32> = (0..4 * 8 * 8).map(|i| ((i * (k + 3)) % 17) as f32).collect();
        Volume::new([4, 8, 8], data).unwrap().write_to(std::fs::File::create(&path).unwrap()).unwrap();
        inputs.push(path.to_str().unwrap().to_string());
    }
    let d = dir_str(dir.path());
    let out = tu(&["tokenize", "--input", &inputs.join(","), "--patch", "2,4,4", "--vocab", "3", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let corpus = load_corpus(dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.len(), 3);
    assert_eq!(corpus[0].sequence.len(), 2 * 2 * 2);

    let corpus_path = dir.path().join("corpus.jsonl");
    let out = tu(&["pretrain", "--corpus", dir_str(&corpus_path), "--iterations", "20", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("pretrain.train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 21);
    assert!(dir.path().join("pretrain.model.ckpt").exists());
}

#[test]
fn pretrain_on_synthetic_bigram_reaches_entropy_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = tu(&["pretrain", "--iterations", "1500", "--synthetic-len", "16", "--out-dir", dir_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let s = summary(&out);
    let (loss, h) = (s["loss_next_per_token"].as_f64().unwrap(), s["entropy_rate"].as_f64().unwrap());
    assert!((loss - h).abs() < 0.05 * h, "{loss} vs {h}");
}
