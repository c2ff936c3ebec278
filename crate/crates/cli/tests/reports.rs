use std::path::Path;
use std::process::Command as Process;

use hamadv_cli::{build_report, parse_config, EXIT_ERROR, EXIT_OK, EXIT_VIOLATION};
use proptest::prelude::*;
use serde_json::Value;

fn schema() -> jsonschema::Validator {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("report.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn scenario(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap()
}

fn small(text: &str) -> String {
    let mut v: Value = serde_json::from_str(text).unwrap();
    let params = v.as_object_mut().unwrap().entry("parameters").or_insert(serde_json::json!({}));
    params["sweep_grid"] = serde_json::json!({"q_points": 12, "p_points": 3});
    v.to_string()
}

fn report_json(text: &str) -> (Value, u8) {
    let out = build_report(&parse_config(text).unwrap());
    (serde_json::to_value(&out.report).unwrap(), out.report.exit_code)
}

#[test]
fn every_command_matches_the_schema() {
    let validator = schema();
    let cases = [
        ("integrate_leapfrog_free.json", EXIT_OK),
        ("diagnose_midpoint_bump.json", EXIT_OK),
        ("adversary_step_and_project.json", EXIT_VIOLATION),
        ("multidof_product_rk4.json", EXIT_VIOLATION),
    ];
    for (name, code) in cases {
        let (v, exit) = report_json(&small(&scenario(name)));
        assert_eq!(exit, code, "{name}");
        let errors: Vec<String> = validator.iter_errors(&v).map(|e| format!("{} at {}", e, e.instance_path)).collect();
        assert!(errors.is_empty(), "{name}: {errors:?}");
    }
}

#[test]
fn domain_errors_are_reported_with_exit_one() {
    let text = r#"{"command":"adversary","integrator":{"method":"leapfrog"},"dt":0.1,"parameters":{"exclusion_radius":0.05}}"#;
    let (v, exit) = report_json(text);
    assert_eq!(exit, EXIT_ERROR);
    assert_eq!(v["status"], "error");
    assert!(v["error"].as_str().unwrap().contains("gap"));
    assert!(schema().is_valid(&v));
}

#[test]
fn schema_rejects_malformed_reports() {
    let (mut v, _) = report_json(&scenario("integrate_leapfrog_free.json"));
    v["exit_code"] = serde_json::json!(2);
    assert!(!schema().is_valid(&v));
}

#[test]
fn binary_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("adv.json");
    std::fs::write(&cfg, small(&scenario("adversary_step_and_project.json"))).unwrap();
    let out = dir.path().join("out");
    let status = Process::new(env!("CARGO_BIN_EXE_hamadv"))
        .args(["adversary", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--threads", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("q,p,det,det_err\n"));
    assert_eq!(csv.lines().count(), 1 + 12 * 3);
    assert!(out.join("report.json").exists());
}

#[test]
fn unwritable_output_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("int.json");
    std::fs::write(&cfg, scenario("integrate_leapfrog_free.json")).unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let output = Process::new(env!("CARGO_BIN_EXE_hamadv"))
        .args(["integrate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("hamadv:"));
}

#[test]
fn bad_config_and_command_mismatch_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"command":"integrate","integrator":{"method":"leapfrog"},"dt":-1}"#).unwrap();
    let status = Process::new(env!("CARGO_BIN_EXE_hamadv"))
        .args(["integrate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    std::fs::write(&cfg, scenario("integrate_leapfrog_free.json")).unwrap();
    let status = Process::new(env!("CARGO_BIN_EXE_hamadv"))
        .args(["diagnose", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn help_documents_csv_columns() {
    let output = Process::new(env!("CARGO_BIN_EXE_hamadv")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&output.stdout);
    for col in ["q,p,det,det_err", "det_err", "HAMADV_THREADS"] {
        assert!(text.contains(col), "{col}");
    }
}

proptest! {
    #[test]
    fn parse_config_never_panics(text in ".{0,200}") {
        let _ = parse_config(&text);
    }

    #[test]
    fn parse_config_never_panics_on_json_shapes(
        dt in prop_oneof![Just(f64::NAN), Just(-1.0), Just(0.0), 1e-6..1.0f64],
        method in prop_oneof![Just("leapfrog"), Just("rk4"), Just("nope"), Just("step_and_project")],
        samples in 0usize..4,
    ) {
        let text = format!(
            r#"{{"command":"diagnose","integrator":{{"method":"{method}"}},"dt":{dt},"parameters":{{"samples":{samples}}}}}"#
        );
        let _ = parse_config(&text);
    }
}
