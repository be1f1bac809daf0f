use std::fs;
use std::path::Path;

use jetsolve::cli::main_with_args;
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    let mut all = vec!["jetsolve"];
    all.extend_from_slice(args);
    main_with_args(all)
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn laplace_with_zero_jet_writes_a_zero_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"system": {"name": "laplace"}, "R0": 0.5, "res": 11}"#);
    let out = tmp.path().join("out");
    assert_eq!(run(&["solve", &cfg, "--output.dir", out.to_str().unwrap()]), 0);

    let csv = fs::read_to_string(out.join("field.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x1,x2,u1,residual"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[2] == 0.0));

    let rep = report(&out);
    assert_eq!(rep["status"], "converged");
    assert_eq!(rep["command"], "solve");
    assert!(rep["metadata"]["timestamp_unix"].is_u64());
}

#[test]
fn config_errors_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"system": {"name": "laplace"}, "res": 11}"#);
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(run(&["solve", &cfg, "--alpha", "1.5", "--output.dir", out]), 3);
    assert_eq!(run(&["solve", &cfg, "--res=10", "--output.dir", out]), 3);
    assert_eq!(run(&["solve", &cfg, "--no_such_key", "1", "--output.dir", out]), 3);
    assert_eq!(run(&["solve", &cfg, "--system.name", "nope", "--output.dir", out]), 3);
    assert_eq!(run(&["solve", &cfg, "--jet.c1", "[[1, 2, 3]]", "--output.dir", out]), 3);
    assert_eq!(run(&["solve", tmp.path().join("missing.json").to_str().unwrap()]), 3);
    assert_eq!(run(&["verify-lemmas", "--alpha", "0"]), 3);
    assert_eq!(run(&["frobnicate"]), 3);
}

#[test]
fn verify_lemmas_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(run(&["verify-lemmas", "--alpha", "0.5", "--R", "1", "--n", "2", "--res", "11", "--out", out]), 0);
    let rep = report(tmp.path());
    assert_eq!(rep["status"], "pass");
    assert!(rep["result"]["functions"].as_u64().unwrap() >= 20);
}

#[test]
fn no_convergence_exits_with_two_and_still_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "system": {"name": "minimal_surface"},
            "R0": 4.0,
            "R_min": 3.0,
            "res": 21,
            "harmonic_seed": {"components": [[{"coeff": 0.5, "powers": [2, 0]}, {"coeff": -0.5, "powers": [0, 2]}]]}
        }"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(run(&["solve", &cfg, "--output.dir", out.to_str().unwrap()]), 2);
    let rep = report(&out);
    assert_ne!(rep["status"], "converged");
    assert!(rep["error"].is_string() || rep["error"].is_object());
    assert!(!out.join("field.csv").exists());
}

#[test]
fn kobayashi_on_flat_target_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"kobayashi": {"target": "euclidean", "m": 2, "p": [0.3, -0.1], "X": [1.0, 0.5]}}"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(run(&["kobayashi", &cfg, "--output.dir", out.to_str().unwrap()]), 0);
    let rep = report(&out);
    assert_eq!(rep["result"]["upper_bound"], 0.0);
    assert_eq!(rep["result"]["rule"], "linear_certificate");
}
