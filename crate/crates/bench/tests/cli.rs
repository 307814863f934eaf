use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nano_core::harness::{read_results, OutputFormat, CSV_HEADER};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nano-bench")).args(args).output().expect("spawn nano-bench")
}

fn run_csv(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = dir.join(name);
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = bench(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::read_to_string(out).unwrap()
}

#[test]
fn run_writes_one_row_per_trial_and_filter() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_csv(
        dir.path(),
        "r.csv",
        &["--scenario", "linear", "--filters", "kf,ekf,nano", "--trials", "3", "--horizon", "50", "--seed", "7"],
    );
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 9);
    let rows = read_results(&dir.path().join("r.csv"), OutputFormat::Csv).unwrap();
    assert!(rows.iter().all(|r| r.time_ms_per_step.is_some() && r.rmse.is_finite()));
    assert_eq!(rows.iter().map(|r| r.seed).min(), Some(7));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"scenario":"linear","filters":["kf","ukf"],"trials":4,"horizon":30,"seed":1}"#).unwrap();
    let text = run_csv(dir.path(), "r.csv", &["--config", cfg.to_str().unwrap(), "--trials", "2"]);
    let rows = read_results(&dir.path().join("r.csv"), OutputFormat::Csv).unwrap();
    assert_eq!(rows.len(), 4, "{text}");
    assert!(rows.iter().all(|r| r.trial < 2));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"scenario":"linear","trails":4}"#).unwrap();
    let o = bench(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn json_output_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = bench(&[
        "run", "--scenario", "satellite", "--filters", "ekf,nano", "--trials", "2", "--horizon", "40", "--format", "json",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_results(&out, OutputFormat::Json).unwrap();
    assert_eq!(rows.len(), 4);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"summary\"") && text.contains("\"std\""));
}

#[test]
fn unsupported_or_unknown_filters_fail() {
    let o = bench(&["run", "--scenario", "linear", "--filters", "pf"]);
    assert!(!o.status.success());
    let o = bench(&["run", "--scenario", "satellite", "--filters", "kf", "--trials", "1", "--horizon", "5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn no_timing_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--scenario", "linear", "--trials", "3", "--horizon", "40", "--no-timing"];
    let a = run_csv(dir.path(), "a.csv", &args);
    let b = run_csv(dir.path(), "b.csv", &args);
    assert_eq!(a, b);
    assert!(a.lines().skip(1).all(|l| l.split(',').nth(5) == Some("")));
}

#[test]
fn stdout_is_used_without_out() {
    let o = bench(&["run", "--scenario", "linear", "--filters", "kf", "--trials", "1", "--horizon", "10", "--no-timing"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    assert_eq!(text.lines().count(), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn validate_passes() {
    let o = bench(&["validate"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().all(|l| l.contains("PASS")));
}
