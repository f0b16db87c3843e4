//! End-to-end runs of the `condmon` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_condmon"))
}

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    }
    out
}

/// Run directories under `runs` created by the `suffix` command, oldest first.
fn run_dirs(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir.join("runs"))
        .map(|r| r.map(|e| e.unwrap().path()).filter(|p| p.file_name().unwrap().to_string_lossy().ends_with(suffix) || p.file_name().unwrap().to_string_lossy().contains(&format!("{suffix}-"))).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn synth(dir: &Path, successes: usize, failures: usize) -> PathBuf {
    let out = run(dir, &["synth", "--out", "corpus", "--successes", &successes.to_string(), "--failures", &failures.to_string()]);
    assert!(out.status.success());
    dir.join("corpus/manifest.jsonl")
}

#[test]
fn synth_then_prepare_gives_a_stable_70_30_split() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 70, 30);
    assert!(dir.path().join("corpus/paraphrases.json").exists());
    for out in ["a", "b"] {
        assert!(run(dir.path(), &["prepare", "--manifest", manifest.to_str().unwrap(), "--out", out, "--seed", "3"]).status.success());
    }
    let a = std::fs::read_to_string(dir.path().join("a/split.json")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/split.json")).unwrap();
    assert_eq!(a, b);
    let split: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 70);
    assert_eq!(split["val"].as_array().unwrap().len(), 30);
    let val = std::fs::read_to_string(dir.path().join("b/val.jsonl")).unwrap();
    assert_eq!(val.lines().filter(|l| l.contains(r#""kind":"demonstration""#)).count(), 30);
}

#[test]
fn missing_inputs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["prepare", "--manifest", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
    let manifest = synth(dir.path(), 4, 2);
    let out = run(dir.path(), &["eval", "--checkpoint", "missing.ckpt", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["train", "--manifest", manifest.to_str().unwrap(), "--set", "train.bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_smoke_eval_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 12, 4);
    let m = manifest.to_str().unwrap();
    for _ in 0..2 {
        assert!(run(dir.path(), &["train", "--manifest", m, "--epochs", "1", "--seed", "4"]).status.success());
    }
    let runs = run_dirs(dir.path(), "train");
    assert_eq!(runs.len(), 2);
    for r in &runs {
        assert!(r.join("best.ckpt").exists() && r.join("last.ckpt").exists() && r.join("train_record.jsonl").exists());
    }
    let metrics = |r: &PathBuf| std::fs::read_to_string(r.join("metrics.json")).unwrap();
    assert_eq!(metrics(&runs[0]), metrics(&runs[1]));

    let ckpt = runs[0].join("best.ckpt");
    let out = run(dir.path(), &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", m, "--bench", "--set", "eval.bench_batches=5"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("latency"));
    let ev = &run_dirs(dir.path(), "eval")[0];
    assert!(ev.join("anomaly_report.json").exists());
    let phase: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("phase_report.json")).unwrap()).unwrap();
    assert!(phase["latency"]["mean_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn no_consistency_variant_fixes_beta_in_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 6, 2);
    assert!(run(dir.path(), &["train", "--manifest", manifest.to_str().unwrap(), "--epochs", "1", "--variant", "no_consistency"]).status.success());
    let snap = std::fs::read_to_string(run_dirs(dir.path(), "train")[0].join("run.toml")).unwrap();
    assert!(snap.contains("use_consistency = false"), "{snap}");
    let weights: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run_dirs(dir.path(), "train")[0].join("metrics.json")).unwrap()).unwrap();
    assert_eq!(weights["weights"]["beta"].as_f64(), Some(0.0));
}

#[test]
fn diverging_training_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 6, 2);
    let out = run(dir.path(), &["train", "--manifest", manifest.to_str().unwrap(), "--epochs", "3", "--lr", "1e200"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn oracle_eval_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 10, 5);
    assert!(run(dir.path(), &["eval", "--oracle", "--manifest", manifest.to_str().unwrap()]).status.success());
    let ev = &run_dirs(dir.path(), "eval")[0];
    for f in ["phase_report.json", "anomaly_report.json"] {
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join(f)).unwrap()).unwrap();
        for k in ["accuracy", "precision", "recall", "f1"] {
            assert_eq!(r[k].as_f64(), Some(1.0), "{f} {k}");
        }
    }
}

#[test]
fn monitor_sim_with_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    for (name, episodes) in [("nominal_pour", 0), ("spill_pour", 1)] {
        let script = assets().join(format!("scripts/{name}.json"));
        let tree = assets().join(format!("trees/{name}.json"));
        let out = run(dir.path(), &["monitor-sim", "--oracle", "--script", script.to_str().unwrap(), "--tree", tree.to_str().unwrap()]);
        assert!(out.status.success());
        let r = run_dirs(dir.path(), "monitor-sim").into_iter().find(|p| !seen.contains(p)).unwrap();
        let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(r.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["anomaly_episodes"].as_array().unwrap().len(), episodes, "{name}");
        assert!(std::fs::read_to_string(r.join("timeline.svg")).unwrap().starts_with("<svg"));
        assert!(r.join("events.jsonl").exists());
        seen.push(r);
    }
}

#[test]
fn rerun_reproduces_from_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 10, 4);
    assert!(run(dir.path(), &["prepare", "--manifest", manifest.to_str().unwrap(), "--seed", "9"]).status.success());
    let first = run_dirs(dir.path(), "prepare")[0].clone();
    assert!(run(dir.path(), &["rerun", first.to_str().unwrap()]).status.success());
    let second = run_dirs(dir.path(), "prepare").into_iter().find(|p| *p != first).unwrap();
    assert_eq!(std::fs::read(first.join("split.json")).unwrap(), std::fs::read(second.join("split.json")).unwrap());
}

#[test]
fn docs_page_is_written() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["docs", "--out", "ref/cli.md"]).status.success());
    let page = std::fs::read_to_string(dir.path().join("ref/cli.md")).unwrap();
    assert!(page.contains("monitor-sim"));
}
