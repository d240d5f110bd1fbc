//! End-to-end tests of the command-line binary: exit codes, file outputs and
//! byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_gbellman")
}

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary must run")
}

/// A small, fast variant of the shipped heat problem.
fn quick_config(dir: &Path) -> PathBuf {
    let text = r#"{
  "dimensions": {"state": 1, "noise": 1, "control": 1},
  "generator": {"sigma_min": 0.25, "atoms": [
    {"sigma": [0.25], "penalty": 0.0},
    {"sigma": [1.0], "penalty": 0.0}
  ]},
  "coefficients": {"drift": ["0"], "diffusion": [["1"]], "terminal": "x1^2"},
  "control_set": {"bounds": [[0.0, 0.0]], "points_per_axis": [1]},
  "lipschitz": 9.0,
  "grids": {
    "space": [{"lo": -4.0, "hi": 4.0, "points": 81}],
    "time": {"horizon": 1.0, "steps": 50}
  },
  "solver": {"picard_iters": 1, "quadrature": {"rule": "ternary", "spread": 1.4142135623730951}, "seed": 5}
}"#;
    let path = dir.join("quick.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn solve_writes_surface_and_reports_center_value() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let out = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--deterministic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("surface.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,value,argmin_u");
    // 51 levels x 81 points
    assert_eq!(csv.lines().count(), 1 + 51 * 81);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("value at center"), "{stdout}");
}

#[test]
fn pde_solver_flag_works() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let out = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--solver",
        "pde",
        "--deterministic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("surface.csv").exists());
}

#[test]
fn outputs_are_byte_identical_under_deterministic_flag() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let config = quick_config(dir_a.path());
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "solve",
            "--config",
            config.to_str().unwrap(),
            "--deterministic",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let out = run(&[
            "validate",
            "--config",
            config.to_str().unwrap(),
            "--deterministic",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["surface.csv", "report.json"] {
        let a = std::fs::read(dir_a.path().join(file)).unwrap();
        let b = std::fs::read(dir_b.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
}

#[test]
fn validate_report_has_versioned_schema() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let out = run(&[
        "validate",
        "--config",
        config.to_str().unwrap(),
        "--deterministic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema"], 1);
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() >= 12);
    assert!(report.get("generated_at").is_none());
}

#[test]
fn compare_and_dpp_check_run_on_shipped_configs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "compare",
        "--config",
        shipped("gheat_concave.json").to_str().unwrap(),
        "--deterministic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run(&[
        "dpp-check",
        "--config",
        shipped("drift_control.json").to_str().unwrap(),
        "--windows",
        "1,2",
        "--deterministic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn cfl_violation_is_a_config_error_with_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    // a value-coupled running cost at ten coarse steps pushes the driver
    // budget over the limit (the diffusion part alone is absorbed by span
    // widening)
    let text = std::fs::read_to_string(quick_config(dir.path())).unwrap();
    let coarse = text.replace(r#""steps": 50"#, r#""steps": 10"#).replace(
        r#""drift": ["0"]"#,
        r#""drift": ["0"], "running_cost": "0.5*y""#,
    );
    let path = dir.path().join("coarse.json");
    std::fs::write(&path, coarse).unwrap();
    let out = run(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("E_CFL"), "{stderr}");
    assert!(stderr.contains("weight sum"), "{stderr}");
}

#[test]
fn missing_config_is_an_io_error() {
    let out = run(&["solve", "--config", "/nonexistent/nowhere.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_json_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = run(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_identifier_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(quick_config(dir.path())).unwrap();
    let bad = text.replace("x1^2", "q7 + 1");
    let path = dir.path().join("bad.json");
    std::fs::write(&path, bad).unwrap();
    let out = run(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("coefficients.terminal"), "{stderr}");
}
