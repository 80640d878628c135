//! End-to-end tests of the `annulus` binary: wire formats, exit codes, and
//! byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

fn annulus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annulus"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_eps72_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("eps72.json");
    std::fs::write(
        &path,
        r#"{"mode":"length-class","dim":2,"p":3,"coefficients":["1/18","5/36","7/72"]}"#,
    )
    .unwrap();
    path
}

#[test]
fn solve_coeffs_reproduces_the_known_line_point() {
    let out = annulus(&["solve-coeffs", "--dim", "2", "--t", "1/72"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["\"1/18\"", "\"5/36\"", "\"7/72\"", "\"length-class\""] {
        assert!(text.contains(needle), "missing {needle} in {text}");
    }
    // The emitted config round-trips through the measure loader.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emitted.json");
    std::fs::write(&path, &text).unwrap();
    let check = annulus(&[
        "measure",
        "box",
        "--config",
        path.to_str().unwrap(),
        "--box",
        "-1/2,-1/6;-1/2,1/2",
    ]);
    assert!(check.status.success());
    assert_eq!(String::from_utf8(check.stdout).unwrap(), "1/3\n");
}

#[test]
fn solve_coeffs_defaults_to_the_uniform_point() {
    let out = annulus(&["solve-coeffs", "--dim", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("\"1/27\"").count(), 4);
}

#[test]
fn out_of_box_parameters_fail_with_error_json() {
    let out = annulus(&["solve-coeffs", "--dim", "2", "--t", "1/36"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value =
        serde_json::from_slice(&out.stderr).expect("stderr is machine-readable JSON");
    assert_eq!(err["error"], "OutOfOpenBox");
}

#[test]
fn measure_box_exact_and_enclosure_modes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_eps72_config(dir.path());
    let config = config.to_str().unwrap();

    let exact = annulus(&[
        "measure", "box", "--config", config, "--box", "-1/6,1/6;-1/6,1/6",
    ]);
    assert!(exact.status.success());
    assert_eq!(String::from_utf8(exact.stdout).unwrap(), "1/18\n");

    // Off-grid endpoints are rejected in exact mode...
    let rejected = annulus(&["measure", "box", "--config", config, "--box", "0,1/4;0,1/4"]);
    assert_eq!(rejected.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&rejected.stderr).unwrap();
    assert_eq!(err["error"], "NotGridRational");

    // ...and served as a certified interval in enclosure mode.
    let enclosed = annulus(&[
        "measure", "box", "--config", config, "--box", "0,1/4;0,1/4", "--gen", "5",
    ]);
    assert!(enclosed.status.success());
    let text = String::from_utf8(enclosed.stdout).unwrap();
    let (lo, hi) = text.trim().split_once(',').unwrap();
    assert!(lo.contains('/') && hi.contains('/'));
}

#[test]
fn counterexample_chain_rows_all_pass() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_eps72_config(dir.path());
    let out = annulus(&[
        "audit",
        "counterexample",
        "--config",
        config.to_str().unwrap(),
        "--n",
        "6",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("n,chain,expected,pass\n"));
    assert_eq!(text.matches(",true").count(), 6);
    assert!(text.contains("1,3/8,3/8,true"));
    assert!(text.contains("# eps = 1/72"));
}

#[test]
fn counterexample_requires_a_balanced_measure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skew.json");
    std::fs::write(
        &path,
        r#"{"mode":"length-class","dim":2,"p":3,"coefficients":["1/3","1/12","1/12"]}"#,
    )
    .unwrap();
    let out = annulus(&[
        "audit",
        "counterexample",
        "--config",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "AdcClassRequired");
}

#[test]
fn audits_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_eps72_config(dir.path());
    let config = config.to_str().unwrap();
    let args = [
        "audit", "adc", "--config", config, "--depth", "1", "--k-max", "1", "--j-max", "2",
    ];
    let first = annulus(&args);
    let second = annulus(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
    // Different worker counts do not change the bytes either.
    let forced_serial = annulus(&[
        "audit", "adc", "--config", config, "--depth", "1", "--k-max", "1", "--j-max", "2",
        "--jobs", "1",
    ]);
    assert_eq!(first.stdout, forced_serial.stdout);

    let doubling = [
        "audit", "doubling", "--config", config, "--samples", "10", "--seed", "11",
    ];
    assert_eq!(annulus(&doubling).stdout, annulus(&doubling).stdout);
}

#[test]
fn empty_scan_emits_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_eps72_config(dir.path());
    let out = annulus(&[
        "audit",
        "adc",
        "--config",
        config.to_str().unwrap(),
        "--depth",
        "1",
        "--k-max",
        "0",
        "--j-max",
        "0",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let data_lines: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect();
    assert_eq!(data_lines.len(), 1);
    assert!(data_lines[0].starts_with("center,r,R,metric"));
}

#[test]
fn doubling_and_contiguity_report_pass() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_eps72_config(dir.path());
    let config = config.to_str().unwrap();

    let doubling = annulus(&[
        "audit", "doubling", "--config", config, "--samples", "20", "--seed", "4",
    ]);
    assert!(doubling.status.success());
    let text = String::from_utf8(doubling.stdout).unwrap();
    assert!(text.starts_with("center,r,inner_lo"));
    assert_eq!(text.lines().count(), 21);
    assert!(text.contains(",true"));

    let contiguity = annulus(&["audit", "contiguity", "--config", config, "--depth", "1"]);
    assert!(contiguity.status.success());
    let json: serde_json::Value =
        serde_json::from_slice(&contiguity.stdout).unwrap();
    assert_eq!(json["min_adjacent_ratio"], "2/5");
    assert_eq!(json["pass"], true);
}

#[test]
fn lln_writes_stats_json_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_eps72_config(dir.path());
    let out_path = dir.path().join("stats.json");
    let out = annulus(&[
        "diag",
        "lln",
        "--config",
        config.to_str().unwrap(),
        "--law",
        "mu",
        "--samples",
        "100",
        "--depth",
        "15",
        "--seed",
        "21",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {:?}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(json["law"], "mu");
    assert_eq!(json["pass"], true);
    assert_eq!(json["samples"], 100);
}

#[test]
fn trajectory_emits_plot_ready_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_eps72_config(dir.path());
    let out = annulus(&[
        "diag",
        "trajectory",
        "--config",
        config.to_str().unwrap(),
        "--law",
        "lebesgue",
        "--depth",
        "10",
        "--point",
        "1/3;-1/7",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("n,log_density\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 12);

    // Unknown law is a validation error.
    let bad = annulus(&[
        "diag",
        "trajectory",
        "--config",
        config.to_str().unwrap(),
        "--law",
        "gauss",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn malformed_config_gives_machine_readable_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(
        &path,
        r#"{"mode":"length-class","dim":2,"p":3,"coefficients":["1/9","1/9","1/8"]}"#,
    )
    .unwrap();
    let out = annulus(&[
        "diag",
        "entropy",
        "--config",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "NotNormalized");
}
