//! Binary-level checks: argument surface, file outputs, exit codes
//! (0 full success, 2 partial cell failures, 1 fatal error).

use rand::Rng;
use std::fs;
use std::path::Path;
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_driftbench")
}

fn write_fixture(dir: &Path) {
    let mut rng = driftbench_core::seed::rng(5150);
    let mut csv = String::from("f0,f1,y,t\n");
    for _ in 0..1_500 {
        let s0 = if rng.random::<f64>() < 0.4 { 1.0 } else { -1.0 };
        let f0 = s0 * (1.0 + rng.random::<f64>());
        let f1 = rng.random::<f64>() * 4.0 - 2.0;
        let y = if s0 > 0.0 { 1 } else { 0 };
        let t = rng.random::<f64>() * 8.0;
        csv.push_str(&format!("{f0},{f1},{y},{t}\n"));
    }
    fs::write(dir.join("data.csv"), csv).unwrap();
    fs::write(
        dir.join("schema.json"),
        r#"{
  "features": [
    {"name": "f0", "kind": "numerical"},
    {"name": "f1", "kind": "numerical"}
  ],
  "label_column": "y",
  "event_time_column": "t",
  "time_unit": "month"
}"#,
    )
    .unwrap();
}

fn base_config(extra_method: &str) -> String {
    format!(
        r#"{{
  "dataset": "data.csv",
  "schema": "schema.json",
  "sampler": {{"k": 2, "lambda": 0.2}},
  "schedule": {{"preset": "baf"}},
  "methods": [
    {{"name": "all-labeled", "selection": "all_labeled",
     "model": {{"kind": "logistic_regression", "learning_rate": 0.5, "max_epochs": 5, "patience": 2}},
     "batch": {{"batch_size": 64, "positive_ratio": 0.1, "seed": 0}}, "seed": 1}}{extra_method}
  ],
  "n_experiments": 1,
  "master_seed": 3
}}"#
    )
}

#[test]
fn run_exits_zero_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    fs::write(dir.path().join("config.json"), base_config("")).unwrap();
    let status = Command::new(binary())
        .current_dir(dir.path())
        .args(["run", "--config", "config.json", "--out", "out"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for file in [
        "records.csv",
        "summary.csv",
        "stats.json",
        "plotdata.json",
        "significance.txt",
        "manifest.json",
        "journal.csv",
    ] {
        assert!(dir.path().join("out").join(file).exists(), "{file} missing");
    }
}

#[test]
fn partial_cell_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let broken = r#",
    {"name": "broken", "selection": "external",
     "model": {"kind": "external", "command": "exit 9"},
     "batch": {"batch_size": 64, "positive_ratio": 0.1, "seed": 0}, "seed": 2}"#;
    fs::write(dir.path().join("config.json"), base_config(broken)).unwrap();
    let status = Command::new(binary())
        .current_dir(dir.path())
        .args(["run", "--config", "config.json", "--out", "out"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn fatal_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    fs::write(dir.path().join("config.json"), "{\"not\": \"a config\"}").unwrap();
    let out = Command::new(binary())
        .current_dir(dir.path())
        .args(["run", "--config", "config.json", "--out", "out"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn schedule_dry_run_emits_json_table() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let out = Command::new(binary())
        .current_dir(dir.path())
        .args([
            "schedule",
            "--data",
            "data.csv",
            "--schema",
            "schema.json",
            "--preset",
            "baf",
            "--dry-run",
            "--json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["timestamps"].as_array().unwrap().len(), 6);
    assert_eq!(parsed["splits"].as_array().unwrap().len(), 5);
}

#[test]
fn sample_writes_domains_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let status = Command::new(binary())
        .current_dir(dir.path())
        .args([
            "sample", "--data", "data.csv", "--schema", "schema.json", "-k", "2", "--lambda",
            "0.1", "--seed", "4", "--out", "domains",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("domains/domain_0.csv").exists());
    assert!(dir.path().join("domains/domain_1.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("domains/sample_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["anchor_rows"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["realized_sizes"].as_array().unwrap().len(), 2);
}

#[test]
fn report_rerenders_from_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    fs::write(dir.path().join("config.json"), base_config("")).unwrap();
    let status = Command::new(binary())
        .current_dir(dir.path())
        .args(["run", "--config", "config.json", "--out", "out"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let status = Command::new(binary())
        .current_dir(dir.path())
        .args(["report", "--in", "out", "--out", "rerendered"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let a = fs::read(dir.path().join("out/records.csv")).unwrap();
    let b = fs::read(dir.path().join("rerendered/records.csv")).unwrap();
    assert_eq!(a, b);
}
