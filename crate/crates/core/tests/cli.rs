//! End-to-end tests of the `fedsim` binary: exit codes, artifacts on disk,
//! and byte-identical replays.

use std::path::Path;
use std::process::{Command, Output};

fn fedsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

const WORKING_CONFIG: &str = r#"
rounds = 3
seeds = [1, 2]

[model]
kind = "logistic"

[data]
num_classes = 2
per_class = 20
dim = 2
separation = 2.0

[partition]
scheme = "dirichlet"
alpha = 0.5
clients = 4

[local]
epochs = 1

[strategy]
harmonize = true
"#;

#[test]
fn run_succeeds_and_replays_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("exp.toml"), WORKING_CONFIG).unwrap();

    let first = fedsim(&["run", "exp.toml", "--out", "a", "--quiet"], tmp.path());
    assert_eq!(
        exit_code(&first),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(first.stdout.is_empty(), "--quiet must silence stdout");

    let second = fedsim(&["run", "exp.toml", "--out", "b", "--quiet"], tmp.path());
    assert_eq!(exit_code(&second), 0);

    for seed in [1, 2] {
        let a = std::fs::read(tmp.path().join(format!("a/run_{seed}/metrics.csv"))).unwrap();
        let b = std::fs::read(tmp.path().join(format!("b/run_{seed}/metrics.csv"))).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "replay must be byte-identical for seed {seed}");
        assert_eq!(
            a.iter().filter(|&&c| c == b'\n').count(),
            4,
            "header + 3 rounds"
        );
    }
}

#[test]
fn run_prints_progress_and_table_without_quiet() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("exp.toml"), WORKING_CONFIG).unwrap();
    let output = fedsim(&["run", "exp.toml", "--out", "out"], tmp.path());
    assert_eq!(exit_code(&output), 0);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        stdout.contains("strategy"),
        "table header expected: {stdout}"
    );
    assert!(
        stdout.contains("fedavg+harmonize"),
        "strategy name expected: {stdout}"
    );
}

#[test]
fn missing_config_file_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let output = fedsim(&["run", "no-such-file.toml"], tmp.path());
    assert_eq!(exit_code(&output), 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("config error"), "got: {stderr}");
}

#[test]
fn invalid_config_exits_two_with_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let broken = WORKING_CONFIG.replace("alpha = 0.5", "alpha = -3.0");
    std::fs::write(tmp.path().join("exp.toml"), &broken).unwrap();
    let output = fedsim(&["run", "exp.toml"], tmp.path());
    assert_eq!(exit_code(&output), 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("partition.alpha"), "got: {stderr}");
}

#[test]
fn diverging_run_exits_one_and_logs_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let diverging = r#"
rounds = 1
seeds = [7]

[model]
kind = "quadratic"
curvature = [1e8, 1e8]
target = [1.0, 1.0]

[data]
num_classes = 1
per_class = 30
dim = 2
separation = 1.0
standardize = false

[partition]
scheme = "iid"
clients = 5

[local]
epochs = 30
batch_size = 6
momentum = 0.0
"#;
    std::fs::write(tmp.path().join("exp.toml"), diverging).unwrap();
    let output = fedsim(&["run", "exp.toml", "--out", "out", "--quiet"], tmp.path());
    assert_eq!(
        exit_code(&output),
        1,
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let log = std::fs::read_to_string(tmp.path().join("out/failures.log")).unwrap();
    assert!(log.contains("diverged"), "got: {log}");
    assert!(!tmp.path().join("out/run_7/metrics.csv").exists());
}

#[test]
fn conflict_probe_emits_per_round_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("exp.toml"), WORKING_CONFIG).unwrap();
    let output = fedsim(
        &[
            "conflict-probe",
            "exp.toml",
            "--out",
            "probe",
            "--seed-override",
            "9",
            "--quiet",
        ],
        tmp.path(),
    );
    assert_eq!(
        exit_code(&output),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    for round in 0..3 {
        let path = tmp
            .path()
            .join(format!("probe/run_9/sim_round{round}.json"));
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(doc["round"], serde_json::json!(round));
        assert_eq!(doc["pairs"].as_array().unwrap().len(), 6, "C(4,2) pairs");
    }
    assert!(
        !tmp.path().join("probe/run_1").exists(),
        "--seed-override must win"
    );
}
