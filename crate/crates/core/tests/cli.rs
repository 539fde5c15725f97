use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn pipediff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pipediff")).args(args).output().expect("binary runs")
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    pipediff(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `gas.json` with one field replaced.
fn gas_with(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(config("gas.json")).unwrap()).unwrap();
    edit(&mut cfg);
    let path = dir.join("edited.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn steady_prints_the_closed_form_gas_state() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("steady", &config("gas.json"), dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("u_left=1.414214"), "{text}");
    assert!(text.contains("slope=0.171573"), "{text}");
    let rows = text.lines().filter(|l| l.split(',').count() == 3).count();
    assert_eq!(rows, 66, "header plus one row per node");
    assert!(dir.path().join("steady.csv").exists());
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn check_on_constant_data_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("check", &config("constant.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn decay_writes_series_and_fitted_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gas_with(dir.path(), |c| {
        c["cells"] = 32.into();
        c["step"] = 2e-3.into();
        c["horizon"] = 4.0.into();
        c["experiment"].as_object_mut().unwrap().remove("rate_study");
    });
    let out = dir.path().join("out");
    let o = run("decay", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(out.join("decay.csv").exists());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let rate = report["fitted"]["entropy_decay_rate"].as_f64().unwrap();
    assert!(rate > 0.0);
    assert!(stdout(&o).contains("entropy_decay_rate="));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = pipediff(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flux_exponent_outside_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gas_with(dir.path(), |c| c["model"]["p"] = 2.5.into());
    let o = run("run", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("model.p") && err.contains("1 < p ≤ 2"), "{err}");
}

#[test]
fn boundary_value_outside_bounds_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gas_with(dir.path(), |c| c["boundary"]["left"]["value"] = 0.0.into());
    let o = run("run", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("boundary.left") && err.contains("u∂ ≤ ū"), "{err}");
}

#[test]
fn malformed_json_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ \"cells\": ").unwrap();
    let o = run("run", &path, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn converge_needs_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("converge", &config("convergence.json"), dir.path(), &["--levels", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--levels"));
}
