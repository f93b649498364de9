//! Runs the `careline` binary against the bundled configuration.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn careline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_careline"))
        .current_dir(root())
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_accepts_bundled_fixtures() {
    let o = careline(&["validate"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("error"));
}

#[test]
fn isoeval_reports_every_case() {
    let o = careline(&["isoeval"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("16/16 passed"));
}

#[test]
fn simulate_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let o = careline(&[
        "--out",
        out.path().to_str().unwrap(),
        "simulate",
        "crates/core/fixtures/patients/chf_compliant.json",
        "crates/core/fixtures/patients/wrong_identity.json",
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("chf_compliant: ok phase=terminated"));
    for f in ["chf_compliant.transcript.jsonl", "chf_compliant.summary.txt", "chf_compliant.metrics.json", "wrong_identity.summary.txt"] {
        assert!(out.path().join(f).is_file(), "missing {f}");
    }
    let summary = std::fs::read_to_string(out.path().join("chf_compliant.summary.txt")).unwrap();
    assert!(summary.contains("Patient: Mary Adams"));
    assert!(summary.contains("furosemide: yes"));
}

#[test]
fn index_saves_each_tenant() {
    let out = tempfile::tempdir().unwrap();
    let o = careline(&["--out", out.path().to_str().unwrap(), "index"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("riverside:") && s.contains("lakeside:"), "{s}");
    assert!(std::fs::read_dir(out.path()).unwrap().count() >= 2);
}

#[test]
fn chat_on_closed_stdin_writes_an_incomplete_summary() {
    let out = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_careline"))
        .current_dir(root())
        .args(["--out", out.path().to_str().unwrap(), "chat"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"Yes, this is Mary.\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(!o.status.success());
    assert!(stdout(&o).contains("agent: "));
    let summary = std::fs::read_to_string(out.path().join("chat.summary.txt")).unwrap();
    assert!(summary.starts_with("Status: incomplete"));
    assert!(out.path().join("chat.transcript.jsonl").is_file());
}

#[test]
fn missing_config_is_reported() {
    let o = careline(&["--config", "no/such/file.toml", "validate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such/file.toml"));
}
