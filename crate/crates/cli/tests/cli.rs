//! End-to-end tests of the `repsim` binary: happy paths, output artifacts,
//! determinism across invocations, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_repsim");

fn repsim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary spawns")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("not killed by signal")
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).expect("scenario written");
    path.to_str().expect("utf-8 path").to_string()
}

/// A small mixed scenario: six honest accounts and two illicit proposers
/// under oracle scores.
fn demo_scenario() -> &'static str {
    r#"{
        "version": 1,
        "name": "demo",
        "rounds": 10,
        "rng_seed": 42,
        "accounts": [
            {"id": 0, "stake": 5},
            {"id": 1, "stake": 5},
            {"id": 2, "stake": 5},
            {"id": 3, "stake": 5},
            {"id": 4, "stake": 5},
            {"id": 5, "stake": 5},
            {"id": 6, "stake": 5, "behavior": "illicit_proposer", "illicit_rate": 1.0, "oracle_score": 0.1},
            {"id": 7, "stake": 5, "behavior": "illicit_proposer", "illicit_rate": 1.0, "oracle_score": 0.1}
        ],
        "reputation": {"mode": "oracle"}
    }"#
}

#[test]
fn run_writes_csv_with_header_and_one_row_per_round() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_scenario(dir.path(), "demo.json", demo_scenario());
    let out_path = dir.path().join("records.csv");
    let out = repsim(&["run", "--config", &config, "--out", out_path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(&out_path).expect("csv written");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(repsim::metrics::CSV_HEADER));
    assert_eq!(lines.count(), 10, "one row per round");
    let summary = String::from_utf8_lossy(&out.stderr);
    assert!(summary.contains("10 rounds"), "summary on stderr: {summary}");
}

#[test]
fn run_without_out_prints_csv_to_stdout() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_scenario(dir.path(), "demo.json", demo_scenario());
    let out = repsim(&["run", "--config", &config]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with(repsim::metrics::CSV_HEADER));
}

#[test]
fn identical_invocations_emit_identical_bytes() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_scenario(dir.path(), "demo.json", demo_scenario());
    let a = repsim(&["run", "--config", &config]);
    let b = repsim(&["run", "--config", &config]);
    assert_eq!(exit_code(&a), 0);
    assert_eq!(exit_code(&b), 0);
    assert_eq!(a.stdout, b.stdout, "same scenario, same bytes");

    let c = repsim(&["run", "--config", &config, "--rng-seed", "43"]);
    assert_eq!(exit_code(&c), 0);
    assert_ne!(a.stdout, c.stdout, "different seed, different records");
}

#[test]
fn rounds_override_changes_row_count() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_scenario(dir.path(), "demo.json", demo_scenario());
    let out = repsim(&["run", "--config", &config, "--rounds", "5"]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 6, "header plus five rows");
}

#[test]
fn no_reputation_flag_changes_nothing_when_scores_are_all_one() {
    let dir = tempfile::tempdir().expect("tempdir");
    // All accounts honest with default oracle score 1.0: disabling
    // reputation must reproduce the identical CSV.
    let body = r#"{
        "version": 1,
        "rounds": 20,
        "rng_seed": 7,
        "accounts": [
            {"id": 0, "stake": 5},
            {"id": 1, "stake": 5},
            {"id": 2, "stake": 5},
            {"id": 3, "stake": 5}
        ],
        "reputation": {"mode": "oracle"}
    }"#;
    let config = write_scenario(dir.path(), "ones.json", body);
    let with_rep = repsim(&["run", "--config", &config]);
    let without = repsim(&["run", "--config", &config, "--no-reputation"]);
    assert_eq!(exit_code(&with_rep), 0);
    assert_eq!(exit_code(&without), 0);
    assert_eq!(with_rep.stdout, without.stdout);
}

#[test]
fn missing_config_file_exits_4() {
    let out = repsim(&["run", "--config", "/nonexistent/path/scenario.json"]);
    assert_eq!(exit_code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn malformed_json_exits_3() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_scenario(dir.path(), "broken.json", "{ not json");
    let out = repsim(&["run", "--config", &config]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn invalid_scenario_exits_3() {
    let dir = tempfile::tempdir().expect("tempdir");
    // Duplicate account id and zero rounds: structurally valid JSON,
    // semantically rejected.
    let body = r#"{
        "version": 1,
        "rounds": 0,
        "rng_seed": 1,
        "accounts": [
            {"id": 0, "stake": 5},
            {"id": 0, "stake": 5}
        ]
    }"#;
    let config = write_scenario(dir.path(), "invalid.json", body);
    let out = repsim(&["run", "--config", &config]);
    assert_eq!(exit_code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "diagnostic on stderr: {stderr}");
}

#[test]
fn rounds_override_to_zero_exits_3() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_scenario(dir.path(), "demo.json", demo_scenario());
    let out = repsim(&["run", "--config", &config, "--rounds", "0"]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn usage_error_exits_2() {
    let out = repsim(&["run", "--config"]);
    assert_eq!(exit_code(&out), 2);
    let out = repsim(&["frobnicate"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn verify_passes_and_prints_one_line_per_check() {
    let out = repsim(&["verify"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines.len() >= 5, "at least the five built-in checks: {stdout}");
    assert!(lines.iter().all(|l| l.starts_with("PASS ")), "all checks pass: {stdout}");
}

#[test]
fn sweep_emits_one_row_per_value() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_scenario(dir.path(), "demo.json", demo_scenario());
    let out_path = dir.path().join("sweep.csv");
    let out = repsim(&[
        "sweep",
        "--config",
        &config,
        "--param",
        "illicit_rate",
        "--values",
        "0.0,0.5,1.0",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&out_path).expect("sweep written");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(repsim::metrics::SWEEP_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3, "one row per swept value");
    assert!(rows.iter().all(|r| r.starts_with("illicit_rate,")));
}

#[test]
fn unknown_sweep_param_exits_3() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_scenario(dir.path(), "demo.json", demo_scenario());
    let out = repsim(&["sweep", "--config", &config, "--param", "gravity", "--values", "1.0"]);
    assert_eq!(exit_code(&out), 3);
}
