//! End-to-end CLI behavior: artifact shapes, reference values through the
//! binary, bundled-example edge cases, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deep-teams"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_csv(path: &PathBuf) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn plan_dss_emits_the_drain_value_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "plan-dss",
        "--scenario",
        &scenario("two_state_flow.toml"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let rows = read_csv(&dir.path().join("value_table.csv"));
    // Header plus one row per deep state, constant width.
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][0], "rank");
    let width = rows[0].len();
    assert!(rows.iter().all(|r| r.len() == width));
    // V(d) = fraction of agents in a.
    for row in &rows[1..] {
        let count_a: f64 = row[1].parse().unwrap();
        let value: f64 = row[3].parse().unwrap();
        assert!((value - count_a / 4.0).abs() <= 1e-9);
    }
}

#[test]
fn riccati_json_matches_quadratic_oracle_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "riccati",
        "--scenario",
        &scenario("smart_grid.toml"),
        "--override",
        "task.kind=riccati",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("riccati.json")).unwrap())
            .unwrap();
    let p = value["p"]["data"][0].as_f64().unwrap();
    let pb = value["pbold"]["data"][0].as_f64().unwrap();
    let theta = value["theta"]["data"][0].as_f64().unwrap();
    let thetab = value["thetabold"]["data"][0].as_f64().unwrap();
    assert!((p - (1.0 + 5.0f64.sqrt()) / 2.0).abs() <= 1e-8);
    assert!((pb - (5.0 + 65.0f64.sqrt()) / 2.0).abs() <= 1e-8);
    assert!((theta + 0.6180340).abs() <= 1e-6);
    assert!((thetab + 0.7655644).abs() <= 1e-6);
    // Weakly coupled block reproduces the aggregate matrix.
    let block = value["weakly_coupled_blocks"][0]["pbar"]["data"][0]
        .as_f64()
        .unwrap();
    assert!((block - pb).abs() <= 1e-9);
}

#[test]
fn example_smart_grid_edge_overrides() {
    // Zero learning iterations still yield a complete, valid manifest.
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "example",
        "smart-grid",
        "--override",
        "hyper.iters=0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let trace = std::fs::read_to_string(dir.path().join("pg_trace_seed1.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1, "header-only trace expected");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert!(manifest["outputs"].as_array().unwrap().len() >= 5);

    // A one-user grid with unit impact factor is orthonormal and valid.
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "example",
        "smart-grid",
        "--override",
        "hyper.iters=0",
        "--override",
        "model.alpha=[[1.0]]",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
}

#[test]
fn exit_codes_distinguish_failure_categories() {
    // Missing scenario file: io error.
    let out = run(&["plan-dss", "--scenario", "/nonexistent/nope.toml"]);
    assert_eq!(out.status.code(), Some(7));

    // Task mismatch without an override: configuration error.
    let out = run(&["riccati", "--scenario", &scenario("smart_grid.toml")]);
    assert_eq!(out.status.code(), Some(3));

    // Non-orthonormal impact factors: model validation error surfaces as
    // a configuration failure at load, naming the invariant.
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "pg",
        "--scenario",
        &scenario("smart_grid.toml"),
        "--override",
        "model.alpha=[[1.0],[0.5]]",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("orthonormal"));

    // Exact planning at beta = 1: numeric error.
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "plan-dss",
        "--scenario",
        &scenario("two_state_flow.toml"),
        "--override",
        "model.beta=1.0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));

    // Blown enumeration budget: its own category.
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "plan-dss",
        "--scenario",
        &scenario("two_state_flow.toml"),
        "--override",
        "model.n=200",
        "--override",
        "hyper.enumeration_budget=100",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn qlearn_trace_has_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "qlearn",
        "--scenario",
        &scenario("two_state_flow_qlearn.toml"),
        "--override",
        "hyper.episodes=200",
        "--override",
        "hyper.trace_every=500",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let rows = read_csv(&dir.path().join("qlearn_trace.csv"));
    assert_eq!(rows[0], vec!["step", "sup_error", "greedy_cost"]);
    assert!(rows.len() > 1);
    assert!(rows.iter().all(|r| r.len() == 3));
}
