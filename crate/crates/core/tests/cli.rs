use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stochproj"));
    c.env_remove("STOCHPROJ_LOG");
    c
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("bad JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn fixtures() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "dirac0.json", r#"{"points": [[0.0]], "weights": [1.0]}"#);
    write(dir.path(), "pair.json", r#"{"points": [[-1.0], [1.0]], "weights": [0.5, 0.5]}"#);
    write(dir.path(), "dirac5.json", r#"{"points": [[5.0]], "weights": [1.0]}"#);
    write(dir.path(), "nu24.json", r#"{"points": [[2.0], [4.0]], "weights": [0.5, 0.5]}"#);
    dir
}

#[test]
fn check_order_exit_codes() {
    let d = fixtures();
    let out = run(&["check-order", "--kind", "convex", "dirac0.json", "pair.json"], d.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["holds"], Value::Bool(true));
    assert_eq!(v["witness"]["type"], "martingale");

    let out = run(&["check-order", "--kind", "convex", "pair.json", "dirac0.json"], d.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["witness"]["type"], "separator");

    let out = run(&["check-order", "--kind", "subharmonic", "--grid", "-2,2,9", "dirac0.json", "pair.json"], d.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn backward_dirac_projection_has_cost_four() {
    let d = fixtures();
    let out = run(&["project", "--direction", "backward", "--order", "convex", "dirac5.json", "nu24.json"], d.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(text.contains("\"cost\": 4.0000000000000000e0"), "{text}");
    let v = json(&out);
    assert_eq!(v["projection"]["points"][0][0].as_f64(), Some(3.0));
}

#[test]
fn forward_projection_writes_out_and_csv() {
    let d = fixtures();
    let out = run(
        &["project", "--direction", "forward", "nu24.json", "dirac5.json", "--grid", "0,8,81", "--out", "r.json", "--csv", "c.csv"],
        d.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("r.json")).unwrap()).unwrap();
    assert!((v["cost"].as_f64().unwrap() - 4.0).abs() < 1e-9);
    let csv = std::fs::read_to_string(d.path().join("c.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
}

#[test]
fn output_is_byte_stable() {
    let d = fixtures();
    let args = ["project", "--direction", "backward", "--grid", "-2,6,33", "dirac5.json", "nu24.json"];
    let a = run(&args, d.path());
    let b = run(&args, d.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    // keys sorted at the top level
    let keys: Vec<&str> = text.lines().filter(|l| l.starts_with("  \"")).map(|l| l.trim().split('"').nth(1).unwrap()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn gap_command_reports_zero_gap() {
    let d = fixtures();
    let out = run(&["gap", "--direction", "backward", "--grid", "0,8,81", "dirac5.json", "nu24.json"], d.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["gap"].as_f64().unwrap().abs() < 1e-9);
    assert!(v["potentialPropertyResidual"].as_f64().unwrap() < 1e-9);
    assert!((v["primal"].as_f64().unwrap() - 4.0).abs() < 1e-9);
}

#[test]
fn usage_errors_exit_two() {
    let d = fixtures();
    write(d.path(), "bad.json", r#"{"points": [[0.0]]}"#);
    let out = run(&["project", "--direction", "backward", "bad.json", "pair.json"], d.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights"));

    write(d.path(), "neg.json", r#"{"points": [[0.0]], "weights": [-1.0]}"#);
    assert_eq!(run(&["check-order", "--kind", "convex", "neg.json", "pair.json"], d.path()).status.code(), Some(2));
    assert_eq!(run(&["check-order", "--kind", "convex", "missing.json", "pair.json"], d.path()).status.code(), Some(2));
    assert_eq!(run(&["check-order", "--kind", "subharmonic", "dirac0.json", "pair.json"], d.path()).status.code(), Some(2));
    assert_eq!(run(&["project", "--direction", "up", "dirac0.json", "pair.json"], d.path()).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], d.path()).status.code(), Some(2));
    let out = run(&["project", "--direction", "backward", "--order", "subharmonic", "--grid", "0,1,11", "dirac5.json", "nu24.json"], d.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["--help"], d.path()).status.code(), Some(0));
}

#[test]
fn solver_failures_exit_three() {
    let d = fixtures();
    // no measure on [0, 1] has mean 5
    let out = run(&["project", "--direction", "forward", "nu24.json", "dirac5.json", "--grid", "0,1,11"], d.path());
    assert_eq!(out.status.code(), Some(3));
    let out = run(&["project", "--direction", "backward", "--grid", "0,1,100000000", "dirac0.json", "pair.json"], d.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn demo_geodesic_leaves_the_cone() {
    let d = fixtures();
    let out = run(&["demo-geodesic"], d.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["order_holds"], Value::Bool(false));
    assert_eq!(v["endpoint_order_holds"], Value::Bool(true));
}

#[test]
fn transform_ops() {
    let d = fixtures();
    write(d.path(), "g.json", r#"{"grid": {"lo": [-1.0], "hi": [1.0], "n": [5]}, "values": [1.0, 0.0, 0.5, 0.0, 1.0]}"#);
    let out = run(&["transform", "--op", "identities", "g.json"], d.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["involution"].as_f64().unwrap() <= 1e-12);

    let out = run(&["transform", "--op", "q2", "--eval-grid", "-2,2,3", "g.json"], d.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["values"].as_array().unwrap().len(), 3);

    let out = run(&["transform", "--op", "envelope", "g.json"], d.path());
    assert_eq!(out.status.code(), Some(0));

    write(d.path(), "short.json", r#"{"grid": {"lo": [-1.0], "hi": [1.0], "n": [5]}, "values": [1.0]}"#);
    assert_eq!(run(&["transform", "--op", "q2", "short.json"], d.path()).status.code(), Some(2));
}

#[test]
fn characterize_round_trip() {
    let d = fixtures();
    write(d.path(), "mu.json", r#"{"points": [[-1.0], [0.0], [1.0]], "weights": [0.3, 0.4, 0.3]}"#);
    write(d.path(), "nu.json", r#"{"points": [[-0.5], [0.5], [1.5]], "weights": [0.3, 0.4, 0.3]}"#);
    let b = run(&["project", "--direction", "backward", "mu.json", "nu.json", "--out", "b.json"], d.path());
    assert_eq!(b.status.code(), Some(0));
    let f = run(&["project", "--direction", "forward", "nu.json", "mu.json", "--grid", "-3,3,121", "--out", "f.json"], d.path());
    assert_eq!(f.status.code(), Some(0));
    let out = run(&["characterize", "b.json", "f.json", "--h", "0.05"], d.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["passed"], Value::Bool(true));
    assert_eq!(v["inverse"]["matched"], 3);

    let out = run(&["characterize", "b.json", "b.json"], d.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn suite_emits_csv_report() {
    let d = fixtures();
    let out = run(&["suite", "--seed", "7", "--count", "4"], d.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("invariant,passed,total,worst,tolerance"));
    assert!(lines.any(|l| l.starts_with("duality_gap_backward,4,4,")));
    let again = run(&["suite", "--seed", "7", "--count", "4"], d.path());
    assert_eq!(text.as_bytes(), again.stdout.as_slice());
}
