use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_minimax-ais");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        files.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
    }
    files
}

/// Runs a command twice into fresh directories and compares every file and
/// stdout byte for byte.
fn assert_deterministic(args: &[&str]) {
    let tmp = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for i in 0..2 {
        let dir = tmp.path().join(format!("run{i}"));
        let mut full: Vec<&str> = args.to_vec();
        let d = dir.to_string_lossy().into_owned();
        full.extend(["--out", &d]);
        let out = run(&full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        outs.push((out.stdout, snapshot(&dir)));
    }
    assert!(!outs[0].1.is_empty());
    assert_eq!(outs[0], outs[1], "{args:?} differs between runs");
}

#[test]
fn constant_cost_values_are_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    run_ok(&["solve", "--spec", "builtin:constant_cost", "--out", &out]);
    let csv = fs::read_to_string(tmp.path().join("values.csv")).unwrap();
    let expected = 2.0 / (1.0 - 0.97);
    for line in csv.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((v - expected).abs() < 1e-6, "{line}");
    }
}

#[test]
fn every_command_is_deterministic() {
    assert_deterministic(&["solve", "--spec", "builtin:hidden_fork", "--kind", "accrued"]);
    assert_deterministic(&["solve", "--spec", "builtin:noisy_three", "--mode", "observable"]);
    assert_deterministic(&["verify", "--spec", "builtin:noisy_three", "--what", "epsilon", "--radius", "1"]);
    assert_deterministic(&["verify", "--spec", "builtin:perfect_chain", "--what", "contraction", "--kind", "perfect", "--seed", "5"]);
    assert_deterministic(&["oracle", "--spec", "builtin:action_cost", "--depth", "3"]);
    assert_deterministic(&["compress", "--spec", "builtin:two_behavior", "--radius", "10"]);
    assert_deterministic(&["certify", "--spec", "builtin:two_behavior", "--radius", "10"]);
    assert_deterministic(&["bench-pursuit", "--seed", "4", "--seeds", "2", "--episodes", "5000"]);
}

#[test]
fn unknown_label_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.json");
    let mut doc: Value = serde_json::from_str(minimax_ais::catalog::source("two_step_chain").unwrap()).unwrap();
    doc["initial_states"] = serde_json::json!(["nowhere"]);
    fs::write(&spec, doc.to_string()).unwrap();
    let out = run(&["solve", "--spec", &spec.to_string_lossy(), "--out", &tmp.path().join("o").to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "unknown_label");
    assert!(err["error"]["message"].as_str().unwrap().contains("nowhere"));
}

#[test]
fn missing_file_and_bad_flags_give_error_documents() {
    let out = run(&["oracle", "--spec", "/nonexistent/system.json", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "io_error");

    let out = run(&["verify", "--spec", "builtin:noisy_three", "--out", "/tmp/x", "--what", "everything"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "usage");
}

#[test]
fn verify_certificates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    let doc = run_ok(&["verify", "--spec", "builtin:perfect_chain", "--what", "info-state", "--kind", "perfect", "--out", &out]);
    assert_eq!(doc["pass"], true);
    assert_eq!(doc["report"]["max_violation"], "0");

    let doc = run_ok(&["verify", "--spec", "builtin:noisy_three", "--what", "observable-cost", "--out", &out]);
    assert_eq!(doc["pass"], true);

    // one cluster merges states with different futures
    let doc = run_ok(&["verify", "--spec", "builtin:two_behavior", "--what", "epsilon", "--radius", "10", "--out", &out]);
    let eps: f64 = doc["report"]["epsilon"].as_str().unwrap().parse().unwrap();
    assert!(eps > 0.0);
    assert!(doc["report"]["witness"]["memory"].is_string());
    assert!(tmp.path().join("certificate.json").exists());

    let out2 = run(&["verify", "--spec", "builtin:hidden_fork", "--what", "observable-cost", "--out", &out]);
    assert_eq!(out2.status.code(), Some(1));
}

#[test]
fn certify_passes_on_two_behaviors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_string_lossy().into_owned();
    let doc = run_ok(&["certify", "--spec", "builtin:two_behavior", "--radius", "10", "--out", &out]);
    assert_eq!(doc["pass"], true);
    let summary = fs::read_to_string(tmp.path().join("summary.txt")).unwrap();
    assert!(summary.contains("PASS") && !summary.contains("FAIL"));
}

#[test]
fn pursuit_single_cell_costs_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("grid.json");
    fs::write(&cfg, r#"{"width": 1, "height": 1}"#).unwrap();
    let out = tmp.path().join("o");
    run_ok(&[
        "bench-pursuit",
        "--config",
        &cfg.to_string_lossy(),
        "--episodes",
        "200",
        "--out",
        &out.to_string_lossy(),
    ]);
    for seed in 0..3 {
        let csv = fs::read_to_string(out.join(format!("comparison_seed{seed}.csv"))).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "0.0,0.0,0,0,0");
    }
}

#[test]
fn pursuit_identical_agents_tie() {
    let tmp = tempfile::tempdir().unwrap();
    let q = tmp.path().join("q.json");
    // the baseline copies episodes, rate and cap but is risk-neutral on
    // observations, so match it exactly
    fs::write(
        &q,
        r#"{"kappa": 0.0, "rule": "risk-weighted", "agent_state": "observation", "episodes": 3000}"#,
    )
    .unwrap();
    let out = tmp.path().join("o");
    run_ok(&["bench-pursuit", "--qconfig", &q.to_string_lossy(), "--out", &out.to_string_lossy()]);
    for seed in 0..3 {
        let csv = fs::read_to_string(out.join(format!("comparison_seed{seed}.csv"))).unwrap();
        for line in csv.lines().skip(1) {
            assert!(line.ends_with(",0"), "{line}");
        }
    }
}

#[test]
fn pursuit_config_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("grid.json");
    fs::write(&cfg, r#"{"width": 3, "height": 3, "colour": "red"}"#).unwrap();
    let out = run(&["bench-pursuit", "--config", &cfg.to_string_lossy(), "--out", &tmp.path().to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
}
