//! End-to-end tests of the command-line binary: exit codes, output files,
//! and byte-level determinism of reruns.

use std::path::Path;
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plapopt"))
}

fn run(args: &[&str]) -> Output {
    binary().args(args).output().expect("binary should spawn")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("missing {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

const SOLVE_1D: &str = r#"{
    "schema": 1,
    "command": "solve",
    "mesh": {"dimension": 1, "extents": [[0.0, 1.0]], "resolution": [64]},
    "problem": {
        "p": 2.0,
        "q": 1.0,
        "g": {"kind": "constant", "value": 1.0},
        "v": {"kind": "constant", "value": 0.0}
    }
}"#;

#[test]
fn test_solve_success_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "run.json", SOLVE_1D);
    let out = dir.path().join("out");
    let result = run(&["solve", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );

    for name in ["result.json", "u.csv", "g.csv", "v.csv", "plot.csv", "manifest.json", "metadata.json"] {
        assert!(out.join(name).is_file(), "expected output file {name}");
    }
    let summary = read_json(&out.join("result.json"));
    assert_eq!(summary["converged"], serde_json::Value::Bool(true));
    let lambda = summary["lambda"].as_f64().unwrap();
    let pi2 = std::f64::consts::PI.powi(2);
    assert!(
        (lambda - pi2).abs() / pi2 < 0.01,
        "lambda {lambda} should be within 1% of pi^2"
    );

    // The manifest lists every hashed file but never itself or the metadata.
    let manifest = read_json(&out.join("manifest.json"));
    let names: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"result.json"));
    assert!(!names.contains(&"manifest.json"));
    assert!(!names.contains(&"metadata.json"));
}

#[test]
fn test_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "run.json", SOLVE_1D);
    let out1 = dir.path().join("first");
    let out2 = dir.path().join("second");
    assert!(run(&["solve", "--config", &config, "--out", out1.to_str().unwrap()]).status.success());
    assert!(run(&["solve", "--config", &config, "--out", out2.to_str().unwrap()]).status.success());
    for name in ["result.json", "u.csv", "g.csv", "v.csv", "plot.csv", "manifest.json"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} should be byte-identical across reruns");
    }
}

#[test]
fn test_hypothesis_violation_exits_one_with_message() {
    let dir = tempfile::tempdir().unwrap();
    // In two dimensions with p = 2, admissibility requires q > N/p = 1.
    let config = write_config(
        dir.path(),
        "bad.json",
        r#"{
            "schema": 1,
            "mesh": {"dimension": 2, "extents": [[0.0, 1.0], [0.0, 1.0]], "resolution": [8, 8]},
            "problem": {
                "p": 2.0,
                "q": 0.5,
                "g": {"kind": "constant", "value": 1.0},
                "v": {"kind": "constant", "value": 0.0}
            }
        }"#,
    );
    let out = dir.path().join("out");
    let result = run(&["solve", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("(H1)"), "stderr should name the hypothesis: {stderr}");
    // Validation failures must not leave a result or manifest behind.
    assert!(!out.join("result.json").exists());
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn test_config_validation_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();

    let wrong_schema = write_config(
        dir.path(),
        "schema.json",
        r#"{"schema": 2, "mesh": {"dimension": 1, "extents": [[0.0, 1.0]], "resolution": [8]}}"#,
    );
    let result = run(&["solve", "--config", &wrong_schema]);
    assert_eq!(result.status.code(), Some(1));

    let wrong_command = write_config(
        dir.path(),
        "command.json",
        r#"{
            "schema": 1,
            "command": "optimize",
            "mesh": {"dimension": 1, "extents": [[0.0, 1.0]], "resolution": [8]}
        }"#,
    );
    let result = run(&["solve", "--config", &wrong_command]);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("optimize"));

    let result = run(&["solve", "--config", dir.path().join("no_such.json").to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));

    // Usage errors (missing required flag) are also validation failures.
    let result = run(&["solve"]);
    assert_eq!(result.status.code(), Some(1));

    // Help is not an error.
    let result = run(&["--help"]);
    assert_eq!(result.status.code(), Some(0));
}

#[test]
fn test_unknown_library_field_exits_one_and_lists_library() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "deriv.json",
        r#"{
            "schema": 1,
            "mesh": {"dimension": 2, "extents": [[0.0, 1.0], [0.0, 1.0]], "resolution": [8, 8]},
            "problem": {
                "p": 2.0,
                "q": 2.0,
                "g": {"kind": "constant", "value": 1.0},
                "v": {"kind": "constant", "value": 0.0}
            },
            "field": "whirlpool"
        }"#,
    );
    let result = run(&["derivative", "--config", &config, "--out",
        dir.path().join("out").to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("stream_bump"), "error should list known fields: {stderr}");
}

#[test]
fn test_non_convergence_exits_two_but_writes_flagged_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "capped.json",
        r#"{
            "schema": 1,
            "mesh": {"dimension": 1, "extents": [[0.0, 1.0]], "resolution": [64]},
            "problem": {
                "p": 3.0,
                "q": 1.0,
                "g": {"kind": "constant", "value": 1.0},
                "v": {"kind": "constant", "value": 0.0}
            },
            "solver": {"max_iters": 2}
        }"#,
    );
    let out = dir.path().join("out");
    let result = run(&["solve", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    // Outputs are still produced, flagged as non-converged, and manifested.
    let summary = read_json(&out.join("result.json"));
    assert_eq!(summary["converged"], serde_json::Value::Bool(false));
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn test_zero_field_derivative_is_identically_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "zero.json",
        r#"{
            "schema": 1,
            "mesh": {"dimension": 2, "extents": [[0.0, 1.0], [0.0, 1.0]], "resolution": [16, 16]},
            "problem": {
                "p": 2.0,
                "q": 2.0,
                "g": {"kind": "radial", "center": [0.6, 0.4], "radius": 0.5, "base": 1.0, "amplitude": 1.0},
                "v": {"kind": "constant", "value": 0.5}
            },
            "field": {"kind": "zero", "dim": 2},
            "t_values": [-0.05, 0.0, 0.05]
        }"#,
    );
    let out = dir.path().join("out");
    let result = run(&["derivative", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let report = read_json(&out.join("result.json"));
    for key in ["value_general", "value_divfree", "value_hadamard", "fd_value"] {
        let v = report[key].as_f64().unwrap_or_else(|| panic!("{key} missing"));
        assert_eq!(v, 0.0, "{key} must vanish for the zero field");
    }
    // The λ(t) sweep of a zero field is flat.
    let plot = std::fs::read_to_string(out.join("plot.csv")).unwrap();
    let lambdas: Vec<f64> = plot
        .lines()
        .skip(1)
        .map(|line| line.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(lambdas.len(), 3);
    let scale = lambdas[0].abs().max(1.0);
    assert!(
        lambdas.iter().all(|l| (l - lambdas[0]).abs() < 1e-8 * scale),
        "transport along the zero field must not move the eigenvalue: {lambdas:?}"
    );
}

#[test]
fn test_seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "seeded.json",
        r#"{
            "schema": 1,
            "mesh": {"dimension": 1, "extents": [[0.0, 1.0]], "resolution": [32]},
            "problem": {
                "p": 2.0,
                "q": 1.0,
                "g": {"kind": "random", "low": 0.5, "high": 1.5, "seed": 11},
                "v": {"kind": "constant", "value": 0.0}
            },
            "solver": {"randomize": true},
            "seed": 5
        }"#,
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    assert!(run(&["solve", "--config", &config, "--out", out_a.to_str().unwrap()]).status.success());
    assert!(run(&["solve", "--config", &config, "--out", out_b.to_str().unwrap(), "--seed", "99"])
        .status
        .success());
    assert!(run(&["solve", "--config", &config, "--out", out_c.to_str().unwrap(), "--seed", "99"])
        .status
        .success());
    // Different initializations converge to the same eigenvalue…
    let la = read_json(&out_a.join("result.json"))["lambda"].as_f64().unwrap();
    let lb = read_json(&out_b.join("result.json"))["lambda"].as_f64().unwrap();
    assert!((la - lb).abs() <= 1e-6 * la.abs(), "{la} vs {lb}");
    // …and equal seeds reproduce the run exactly.
    let b = std::fs::read(out_b.join("result.json")).unwrap();
    let c = std::fs::read(out_c.join("result.json")).unwrap();
    assert_eq!(b, c);
}

#[test]
fn test_check_command_reports_instead_of_failing() {
    let dir = tempfile::tempdir().unwrap();
    // Same inadmissible exponents as the solve test: check must exit 0 and
    // report the violation in the result instead.
    let config = write_config(
        dir.path(),
        "check.json",
        r#"{
            "schema": 1,
            "mesh": {"dimension": 2, "extents": [[0.0, 1.0], [0.0, 1.0]], "resolution": [8, 8]},
            "problem": {
                "p": 2.0,
                "q": 0.5,
                "g": {"kind": "constant", "value": 1.0},
                "v": {"kind": "constant", "value": 0.0}
            }
        }"#,
    );
    let out = dir.path().join("out");
    let result = run(&["check", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let report = read_json(&out.join("result.json"));
    assert_eq!(report["h1_ok"], serde_json::Value::Bool(false));
    assert_eq!(report["passes"], serde_json::Value::Bool(false));
}

#[test]
fn test_sobolev_command_estimates_poincare_constant() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "sobolev.json",
        r#"{
            "schema": 1,
            "mesh": {"dimension": 1, "extents": [[0.0, 1.0]], "resolution": [64]},
            "sobolev": {"p": 2.0, "r": 2.0}
        }"#,
    );
    let out = dir.path().join("out");
    let result = run(&["sobolev", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let summary = read_json(&out.join("result.json"));
    let value = summary["value"].as_f64().unwrap();
    let pi2 = std::f64::consts::PI.powi(2);
    assert!(
        (value - pi2).abs() / pi2 < 0.01,
        "S_2 at p=2 should approximate pi^2, got {value}"
    );
}
