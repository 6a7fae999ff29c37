//! End-to-end tests of the `ofrl` binary: exit-code contract, flag
//! overrides, config echo round-trip, and emitted artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ofrl"))
}

fn bundled_scenario() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/vamvoudakis2d.json")
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run_to_completion(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn run_emits_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let output = run_to_completion(&[
        "run",
        bundled_scenario().to_str().unwrap(),
        "--t-final",
        "0.5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");

    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,x1,x2,xhat1,xhat2,wc1,wc2,wc3,wa1,wa2,wa3,u,delta_t,lam_min,gamma_min,gamma_max,J"
    );
    // 0.5 s at 1 ms: 501 samples. The --t-final flag must beat the file's 100 s.
    assert_eq!(lines.count(), 501);

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("metrics.json")).unwrap())
            .unwrap();
    for key in [
        "final_state_norm",
        "final_estimation_error_norm",
        "final_wc_error",
        "final_wa_error",
        "accumulated_cost",
        "gamma_eig_min",
        "gamma_eig_max",
        "excitation_lambda_min",
        "excitation_warning",
    ] {
        assert!(metrics.get(key).is_some(), "metrics key {key} missing");
    }
    assert_eq!(metrics["t_final"], 0.5);
}

#[test]
fn missing_scenario_is_a_config_error() {
    let output = run_to_completion(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn invalid_dt_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "bad.json", r#"{"dt": 0.0}"#);
    let output = run_to_completion(&["run", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("dt"), "{stderr}");
}

#[test]
fn unknown_key_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "typo.json", r#"{"t_fnal": 1.0}"#);
    let output = run_to_completion(&["run", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("t_fnal"));
}

#[test]
fn t_final_zero_yields_single_sample_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "instant.json", r#"{"t_final": 0.0}"#);
    let out_dir = dir.path().join("out");
    let output = run_to_completion(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2); // header + initial sample
}

#[test]
fn divergence_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    // A step size far outside the stability region makes the loop blow up.
    let path = write_scenario(
        dir.path(),
        "unstable.json",
        r#"{"dt": 50.0, "t_final": 500.0}"#,
    );
    let output = run_to_completion(&["run", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
    assert!(String::from_utf8_lossy(&output.stderr).contains("divergence"));
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        dir.path(),
        "partial.json",
        r#"{"t_final": 2.5, "learner": {"gamma1": 0.7}}"#,
    );
    let output = run_to_completion(&["run", path.to_str().unwrap(), "--dump-config"]);
    assert!(output.status.success());
    let echoed = String::from_utf8(output.stdout).unwrap();
    let reparsed = ofrl::scenario::Scenario::from_json(&echoed).unwrap();
    assert_eq!(reparsed.t_final, 2.5);
    assert_eq!(reparsed.learner.gamma1, 0.7);
    // Echo again through the same printer: must be a fixed point.
    assert_eq!(reparsed.to_json().trim(), echoed.trim());
}

#[test]
fn dump_config_reflects_flag_overrides() {
    let output = run_to_completion(&[
        "run",
        bundled_scenario().to_str().unwrap(),
        "--dt",
        "0.01",
        "--t-final",
        "3.0",
        "--dump-config",
    ]);
    assert!(output.status.success());
    let echoed: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(echoed["dt"], 0.01);
    assert_eq!(echoed["t_final"], 3.0);
}

#[test]
fn verify_passes_on_the_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "short.json", r#"{"t_final": 1.0}"#);
    let report_path = dir.path().join("report.json");
    let output = run_to_completion(&[
        "verify",
        path.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("hjb_residual_ideal_weights"), "{stdout}");
    assert!(stdout.contains("integrator_oracle_agreement"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().len() >= 5);
}

#[test]
fn verify_fails_on_wrong_analytic_weights() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        dir.path(),
        "wrong.json",
        r#"{"t_final": 1.0, "analytic_weights": [2.0, 0.0, 2.0]}"#,
    );
    let output = run_to_completion(&["verify", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(4), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn verify_warns_on_rank_deficient_grid_but_passes() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        dir.path(),
        "single.json",
        r#"{"t_final": 1.0, "learner": {"grid": {"per_axis": 1}}}"#,
    );
    let output = run_to_completion(&["verify", path.to_str().unwrap()]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("excitation_lambda_min"));
    assert!(stdout.contains("advisory"));
}

#[test]
fn nu_gain_warns_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        dir.path(),
        "nu.json",
        r#"{"t_final": 0.01, "learner": {"nu": 0.005}}"#,
    );
    let out_dir = dir.path().join("out");
    let output = run_to_completion(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("nu"));
}

#[test]
fn excitation_floor_warning_on_rank_deficient_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        dir.path(),
        "deficient.json",
        r#"{"t_final": 0.05, "learner": {"grid": {"per_axis": 1}}}"#,
    );
    let out_dir = dir.path().join("out");
    let output = run_to_completion(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("excitation"));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["excitation_warning"], true);
}

#[test]
fn repeated_runs_emit_identical_trace_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "det.json", r#"{"t_final": 1.0}"#);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let output = run_to_completion(&[
            "run",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success());
    }
    let a = std::fs::read(out1.join("trace.csv")).unwrap();
    let b = std::fs::read(out2.join("trace.csv")).unwrap();
    assert_eq!(a, b);
}
