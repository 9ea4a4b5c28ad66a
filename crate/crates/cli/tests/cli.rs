use std::process::{Command, Output};

use serde_json::Value;

fn nsystem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsystem")).args(args).output().expect("spawn nsystem")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

const SYMMETRIC: [&str; 8] = ["--lambda1", "80", "--lambda2", "20", "--n1", "100", "--n2", "100"];
const TOY: [&str; 8] = ["--lambda1", "0.4", "--lambda2", "0.2", "--n1", "1", "--n2", "1"];

#[test]
fn fluid_symmetric() {
    let mut args = vec!["fluid"];
    args.extend(SYMMETRIC);
    let v = stdout_json(&nsystem(&args));
    assert_eq!(v["fluid"]["T"].as_f64(), Some(1.0));
    assert_eq!(v["fluid"]["beta"].as_f64(), Some(0.5));
    assert!((v["fluid"]["m1"].as_f64().unwrap() - 50.0).abs() < 1e-10);
    assert!((v["fluid"]["m2"].as_f64().unwrap() - 50.0).abs() < 1e-10);
    assert!((v["k_geometric"]["success"].as_f64().unwrap() - 0.375).abs() < 1e-12);
}

#[test]
fn params_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    std::fs::write(&path, r#"{"lambda1":80,"lambda2":20,"n1":100,"n2":100,"mu1":1,"mu2":1}"#).unwrap();
    let v = stdout_json(&nsystem(&["fluid", "--params", path.to_str().unwrap()]));
    assert_eq!(v["fluid"]["beta"].as_f64(), Some(0.5));

    std::fs::write(&path, r#"{"lambda1":80,"lambda2":20,"n1":100,"n2":100,"mu1":1,"mu2":1,"x":3}"#).unwrap();
    assert!(!nsystem(&["fluid", "--params", path.to_str().unwrap()]).status.success());
}

#[test]
fn exact_with_oracle() {
    let mut args = vec!["exact", "--oracle", "--qmax", "40"];
    args.extend(TOY);
    let out = nsystem(&args);
    let v = stdout_json(&out);
    assert!(v["oracle"]["max_abs_delta"].as_f64().unwrap() <= 1e-6);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ok"));
}

#[test]
fn exact_csv_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    let mut args = vec!["exact", "--format", "csv", "--out", path.to_str().unwrap()];
    args.extend(TOY);
    assert!(nsystem(&args).status.success());
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("k,i1,i2,prob\n"));
    let total: f64 = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn reproduce_tables_pass() {
    let v = stdout_json(&nsystem(&["reproduce", "--table", "1"]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 24);
    assert!(v["max_abs_delta"].as_f64().unwrap() <= 5e-3);
    let v = stdout_json(&nsystem(&["reproduce", "--table", "2"]));
    assert_eq!(v["pass"], Value::Bool(true));
    assert!(!nsystem(&["reproduce", "--table", "3"]).status.success());
}

#[test]
fn simulate_is_deterministic() {
    let mut args = vec!["simulate", "--horizon", "2000", "--replications", "2", "--seed", "9"];
    args.extend(TOY);
    let a = nsystem(&args);
    let b = nsystem(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["stats"]["r_hat"][1][1].as_f64(), Some(0.0));
}

#[test]
fn simulate_rejects_unstable_without_flag() {
    let args = ["simulate", "--lambda1", "2", "--lambda2", "1", "--n1", "1", "--n2", "1", "--horizon", "100"];
    assert!(!nsystem(&args).status.success());
    let mut forced = args.to_vec();
    forced.push("--allow-unstable");
    assert!(nsystem(&forced).status.success());
}

#[test]
fn simulate_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let mut args = vec!["simulate", "--horizon", "500", "--trace", path.to_str().unwrap(), "--trace-events", "20"];
    args.extend(TOY);
    assert!(nsystem(&args).status.success());
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next(), Some("clock,event,i1,i2,k"));
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn matching_csv() {
    let out = nsystem(&["matching", "--alpha", "0.8", "--beta", "0.5", "--steps", "200000", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let first = text.lines().nth(1).unwrap();
    let p0: f64 = first.split(',').nth(1).unwrap().parse().unwrap();
    assert!((p0 - 0.375).abs() < 0.01);
    assert!(!nsystem(&["matching", "--alpha", "0.4", "--beta", "0.5"]).status.success());
}

#[test]
fn sweep_csv() {
    let out = nsystem(&["sweep", "--n", "20,40,80", "--alpha", "0.8", "--rho", "0.5", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("n,n1,n2,mean_i1"));
    assert!(lines[3].starts_with("80,40,40,"));
}

#[test]
fn missing_params_is_an_error() {
    let out = nsystem(&["fluid", "--lambda1", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--params"));
}
