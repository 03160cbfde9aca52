use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn resistkit(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_resistkit"));
    cmd.args(args);
    for var in ["RESISTKIT_CONFIG", "RESISTKIT_SEED", "RESISTKIT_K", "RESISTKIT_TASK", "RESISTKIT_BACKEND"] {
        cmd.env_remove(var);
    }
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn resistkit");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(cmd: &mut Command) -> String {
    let out = run(cmd);
    assert!(out.status.success(), "exit {:?}", out.status.code());
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic corpus plus adjudicated samples.
fn corpus(dir: &Path) -> std::path::PathBuf {
    ok(&mut resistkit(&["synth", "--sessions", "40", "--seed", "3", "--out", p(dir)]));
    let samples = dir.join("samples.jsonl");
    ok(&mut resistkit(&[
        "build-samples",
        p(&dir.join("sessions.jsonl")),
        "--annotations",
        p(&dir.join("annotations.jsonl")),
        "--labeled-only",
        "--out",
        p(&samples),
    ]));
    samples
}

#[test]
fn validate_accepts_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let samples = corpus(dir.path());
    let out = ok(&mut resistkit(&[
        "validate",
        "--sessions",
        p(&dir.path().join("sessions.jsonl")),
        "--annotations",
        p(&dir.path().join("annotations.jsonl")),
        "--samples",
        p(&samples),
    ]));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["sessions"], 40);
    assert!(v["samples"].as_u64().unwrap() > 0);
}

#[test]
fn split_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let samples = corpus(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&mut resistkit(&["split", p(&samples), "--k", "5", "--seed", "7", "--out", p(out)]));
    }
    for name in ["folds.json", "fold_0.jsonl", "fold_1.jsonl", "fold_2.jsonl", "fold_3.jsonl", "fold_4.jsonl"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
        assert!(!x.is_empty(), "{name}");
    }
    let other = dir.path().join("c");
    ok(&mut resistkit(&["split", p(&samples), "--k", "5", "--seed", "8", "--out", p(&other)]));
    assert_ne!(std::fs::read(a.join("folds.json")).unwrap(), std::fs::read(other.join("folds.json")).unwrap());
}

#[test]
fn mock_gold_run_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let samples = corpus(dir.path());
    let summary = ok(&mut resistkit(&[
        "run",
        p(&samples),
        "--backend",
        "mock-gold",
        "--runs-dir",
        p(&dir.path().join("runs")),
        "--run-id",
        "gold",
    ]));
    let summary: Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["errors"], 0);
    assert_eq!(summary["invalid"], 0);
    let run_file = summary["run_file"].as_str().unwrap().to_string();

    let report = dir.path().join("binary.jsonl");
    ok(&mut resistkit(&["score", p(&samples), "--run", &run_file, "--out", p(&report)]));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 5);
    let table = ok(&mut resistkit(&["aggregate", p(&report), "--table"]));
    assert!(table.contains("1.00_{0.00}"), "{table}");
    assert!(!table.lines().any(|l| l.contains('_') && !l.contains("1.00_{0.00}") && !l.contains("0.00_{0.00}")), "{table}");

    // resuming issues no further requests
    let again = ok(&mut resistkit(&[
        "run",
        p(&samples),
        "--backend",
        "mock-gold",
        "--runs-dir",
        p(&dir.path().join("runs")),
        "--run-id",
        "gold",
    ]));
    let again: Value = serde_json::from_str(&again).unwrap();
    assert_eq!(again["requests_issued"], 0);
    assert_eq!(again["resumed"], summary["total"]);
}

#[test]
fn free_text_backend_is_all_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let samples = corpus(dir.path());
    let summary = ok(&mut resistkit(&["run", p(&samples), "--backend", "mock-text", "--runs-dir", p(&dir.path().join("runs"))]));
    let summary: Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["invalid"], summary["total"]);
    let report = dir.path().join("r.jsonl");
    ok(&mut resistkit(&["score", p(&samples), "--run", summary["run_file"].as_str().unwrap(), "--out", p(&report)]));
    let agg: Value = serde_json::from_str(&ok(&mut resistkit(&["aggregate", p(&report)]))).unwrap();
    assert_eq!(agg["invalid_rate"]["mean"], 1.0);
    assert_eq!(agg["accuracy"]["mean"], 0.0);
}

#[test]
fn unknown_flag_exits_two() {
    let out = run(&mut resistkit(&["split", "--no-such-flag"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(&mut resistkit(&["frobnicate"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"sample_id\": 3}\n").unwrap();
    assert_eq!(run(&mut resistkit(&["stats", p(&bad)])).status.code(), Some(1));
    std::fs::write(&bad, "not json\n").unwrap();
    assert_eq!(run(&mut resistkit(&["validate", "--sessions", p(&bad)])).status.code(), Some(1));
}

#[test]
fn flags_override_env_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let samples = corpus(dir.path());
    let config = dir.path().join("resistkit.toml");
    std::fs::write(&config, format!("k = 2\nseed = 1\n\n[paths]\nsamples = {:?}\n", p(&samples))).unwrap();
    let k_of = |cmd: &mut Command| -> u64 {
        let v: Value = serde_json::from_str(&ok(cmd)).unwrap();
        v["k"].as_u64().unwrap()
    };
    assert_eq!(k_of(&mut resistkit(&["split", "--config", p(&config)])), 2);
    assert_eq!(k_of(resistkit(&["split"]).env("RESISTKIT_CONFIG", &config).env("RESISTKIT_K", "3")), 3);
    assert_eq!(k_of(resistkit(&["split", "--k", "4"]).env("RESISTKIT_CONFIG", &config).env("RESISTKIT_K", "3")), 4);
    assert_eq!(k_of(&mut resistkit(&["split", p(&samples)])), 5);

    std::fs::write(&config, "k = 2\nunknown_key = 1\n").unwrap();
    assert_ne!(run(&mut resistkit(&["split", p(&samples), "--config", p(&config)])).status.code(), Some(0));
}

#[test]
fn credentials_come_from_named_variable() {
    let dir = tempfile::tempdir().unwrap();
    let samples = corpus(dir.path());
    let config = dir.path().join("resistkit.toml");
    std::fs::write(
        &config,
        "[backends.remote]\nbase_url = \"http://127.0.0.1:9/v1\"\nmodel = \"m\"\napi_key_env = \"RESISTKIT_TEST_KEY_UNSET\"\n",
    )
    .unwrap();
    let out = run(resistkit(&["run", p(&samples), "--backend", "remote", "--config", p(&config), "--runs-dir", p(&dir.path().join("r"))])
        .env_remove("RESISTKIT_TEST_KEY_UNSET"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("RESISTKIT_TEST_KEY_UNSET"));
}
