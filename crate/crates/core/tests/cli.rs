//! Black-box checks of the `scout` binary: subcommands, exit codes, and the
//! artifact layout they leave behind.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/f1").join(name)
}

fn scout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scout")).args(args).output().expect("binary runs")
}

fn path_arg(p: &Path) -> String {
    p.to_str().expect("utf-8 path").to_string()
}

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let out_dir = tempfile::tempdir().expect("temp dir");
    let output = scout(&[
        "run",
        "--env",
        &path_arg(&fixture("env.json")),
        "--tasks",
        &path_arg(&fixture("tasks.jsonl")),
        "--policy-script",
        &path_arg(&fixture("policy.json")),
        "--oracle-value",
        "--agent",
        "search",
        "--out",
        &path_arg(out_dir.path()),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    for artifact in ["config.json", "metrics.json", "table.txt", "traces/t-trap.jsonl"] {
        assert!(out_dir.path().join(artifact).exists(), "{artifact} missing");
    }
    let table = String::from_utf8(output.stdout).expect("utf-8 table");
    assert!(table.contains("SR"), "run output missing the summary table: {table}");
}

#[test]
fn sweep_writes_tables() {
    let out_dir = tempfile::tempdir().expect("temp dir");
    let output = scout(&[
        "sweep",
        "--env",
        &path_arg(&fixture("env.json")),
        "--tasks",
        &path_arg(&fixture("tasks.jsonl")),
        "--policy-script",
        &path_arg(&fixture("policy.json")),
        "--oracle-value",
        "--budgets",
        "1,3",
        "--out",
        &path_arg(out_dir.path()),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(out_dir.path().join("sweep.json").exists());
    assert!(out_dir.path().join("sweep.txt").exists());
}

#[test]
fn render_emits_graphviz_and_rejects_unknown_tasks() {
    let out_dir = tempfile::tempdir().expect("temp dir");
    let run = scout(&[
        "run",
        "--env",
        &path_arg(&fixture("env.json")),
        "--tasks",
        &path_arg(&fixture("tasks.jsonl")),
        "--policy-script",
        &path_arg(&fixture("policy.json")),
        "--oracle-value",
        "--out",
        &path_arg(out_dir.path()),
    ]);
    assert!(run.status.success());
    let trace = out_dir.path().join("traces/t-trap.jsonl");

    let rendered = scout(&["render", &path_arg(&trace), "t-trap"]);
    assert!(rendered.status.success());
    let dot = String::from_utf8(rendered.stdout).expect("utf-8 dot");
    assert!(dot.starts_with("digraph"), "unexpected render output: {dot}");
    assert!(dot.contains("click [9]"));

    let missing = scout(&["render", &path_arg(&trace), "no-such-task"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn validate_tasks_splits_exit_codes() {
    let ok = scout(&[
        "validate-tasks",
        &path_arg(&fixture("env.json")),
        &path_arg(&fixture("tasks.jsonl")),
    ]);
    assert!(ok.status.success());

    let dir = tempfile::tempdir().expect("temp dir");
    let bad_tasks = dir.path().join("bad.jsonl");
    std::fs::write(
        &bad_tasks,
        "{\"id\": \"t-bad\", \"env\": \"nowhere\", \"instruction\": \"x\", \"reward\": {\"type\": \"url_match\", \"expected\": \"home\"}}\n",
    )
    .expect("bad tasks written");
    let bad = scout(&[
        "validate-tasks",
        &path_arg(&fixture("env.json")),
        &path_arg(&bad_tasks),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn broken_config_exits_one() {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = dir.path().join("config.json");
    std::fs::write(&config, "{\"no_such_field\": true}").expect("config written");
    let output = scout(&["run", "--config", &path_arg(&config)]);
    assert_eq!(output.status.code(), Some(1));
}
