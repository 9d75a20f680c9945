use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn vpp_sched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpp-sched"))
        .args(args)
        .env_remove("VPP_SCHED_THREADS")
        .output()
        .unwrap()
}

fn status_of(dir: &std::path::Path) -> String {
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("comparison.json")).unwrap()).unwrap();
    doc["status"]["status"].as_str().unwrap().to_string()
}

#[test]
fn smoke_run_writes_reports_and_matches_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = data("smoke.toml");
    let out = vpp_sched(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--deterministic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let code = out.status.code().unwrap();
    let expected = if status_of(dir.path()) == "feasible" { 0 } else { 2 };
    assert_eq!(code, expected, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("grid_energy_mwh"));
    for f in ["controlled_intervals.csv", "uncontrolled_intervals.csv", "trace.csv", "comparison.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn seeded_runs_repeat_across_thread_counts() {
    let scenario = data("smoke.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let base = ["run", "--scenario", scenario.to_str().unwrap(), "--seed", "11", "--format", "json"];
    let mut one = base.to_vec();
    one.extend(["--deterministic", "--out", a.path().to_str().unwrap()]);
    vpp_sched(&one);
    let out = Command::new(env!("CARGO_BIN_EXE_vpp-sched"))
        .args(base)
        .args(["--out", b.path().to_str().unwrap()])
        .env("VPP_SCHED_THREADS", "3")
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(1));
    let read = |d: &std::path::Path| fs::read(d.join("comparison.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert!(!a.path().join("trace.csv").exists(), "json only");
}

#[test]
fn baseline_only_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = data("smoke.toml");
    let out = vpp_sched(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--baseline-only",
        "--format",
        "csv",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("uncontrolled_intervals.csv").exists());
    assert!(!dir.path().join("controlled_intervals.csv").exists());
}

#[test]
fn errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = vpp_sched(&["run", "--scenario", "no/such/file.toml", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
    assert_eq!(vpp_sched(&["run", "--format", "xml"]).status.code(), Some(1));
    let scenario = data("smoke.toml");
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_vpp-sched"))
        .args(["run", "--scenario", scenario.to_str().unwrap(), "--baseline-only"])
        .env("VPP_SCHED_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(1));
}
