mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture;

fn trolley(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trolley"))
        .args(args)
        .env_remove("RUST_LOG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_valid_file_is_silent() {
    let o = trolley(&["validate", path(&fixture("ten.trly"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "");
}

#[test]
fn validate_missing_target() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.trly");
    fs::write(
        &file,
        "scenario 0 \"x\"\n  spawn x=0 y=0 heading_deg=0 speed=0\n  corridor x_min=-5 x_max=5 y_end=80\nend\n",
    )
    .unwrap();
    let o = trolley(&["validate", path(&file)]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1, "{out}");
    assert!(out.starts_with("error:4:1:MISSING_TARGET:"), "{out}");
}

#[test]
fn validate_reports_warnings_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("warn.trly");
    fs::write(
        &file,
        "scenario 0 \"x\"\n  spawn x=0 y=0 heading_deg=0 speed=0\n  target x=0 y=30\n  corridor x_min=-5 x_max=5 y_end=80\n  group id=0 side=left\n  ped name=a group=0 x=2 y=30 age=3 gender=male\nend\n",
    )
    .unwrap();
    let o = trolley(&["validate", path(&file)]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.lines().all(|l| l.starts_with("warning:")), "{out}");
    assert!(out.contains("warning:6:3:SIDE_MISMATCH:"), "{out}");
}

#[test]
fn validate_nonexistent_path() {
    let o = trolley(&["validate", "/definitely/not/here.trly"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn agent_always_right_names_the_right_group() {
    let o = trolley(&["agent", "--file", path(&fixture("fork.trly")), "--policy", "always_right"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    let fields: Vec<&str> = out.trim_end().split('\t').collect();
    assert_eq!(fields[2], "group:1");
    assert_eq!(fields[3], "r0:70:male:elderly");
}

#[test]
fn agent_none_times_out_on_open_road() {
    let o = trolley(&["agent", "--file", path(&fixture("open.trly")), "--policy", "none"]);
    let out = stdout(&o);
    let fields: Vec<&str> = out.trim_end().split('\t').collect();
    assert_eq!(fields[2], "timeout");
    assert_eq!(fields[5], "1800");
}

#[test]
fn seeded_random_agent_is_reproducible_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.tsv");
    let log = dir.path().join("log.tsv");
    let five = fixture("five.trly");
    let args = ["agent", "--file", path(&five), "--policy", "random", "--seed", "7"];
    let first = trolley(&[&args[..], &["--trace", path(&trace), "--log", path(&log)]].concat());
    let second = trolley(&args);
    assert!(first.status.success());
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(stdout(&first).lines().count(), 5);
    assert_eq!(fs::read_to_string(&log).unwrap(), stdout(&first));

    let replayed = trolley(&["replay", path(&five), path(&trace)]);
    assert!(replayed.status.success(), "{}", String::from_utf8_lossy(&replayed.stderr));
    assert_eq!(replayed.stdout, fs::read(&log).unwrap());
}

#[test]
fn replay_rejects_foreign_and_empty_traces() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.tsv");
    trolley(&["agent", "--file", path(&fixture("fork.trly")), "--policy", "always_left", "--trace", path(&trace)]);
    let o = trolley(&["replay", path(&fixture("open.trly")), path(&trace)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("TRACE_MISMATCH"));

    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let o = trolley(&["replay", path(&fixture("fork.trly")), path(&empty)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("TRACE_MISMATCH"));
}

#[test]
fn stats_summarize_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.tsv");
    let five = fixture("five.trly");
    for policy in ["always_left", "always_right"] {
        trolley(&["agent", "--file", path(&five), "--policy", policy, "--log", path(&log)]);
    }
    let o = trolley(&["stats", "--log", path(&log), "--file", path(&five)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total"], 10);
    assert!(v["by_outcome"].is_object());
}

#[test]
fn env_overrides_reach_the_simulation() {
    let o = Command::new(env!("CARGO_BIN_EXE_trolley"))
        .args(["agent", "--file", path(&fixture("open.trly")), "--policy", "none"])
        .env("TROLLEY_T_MAX_TICKS", "90")
        .output()
        .unwrap();
    let out = stdout(&o);
    assert_eq!(out.trim_end().split('\t').nth(5), Some("90"));

    let o = Command::new(env!("CARGO_BIN_EXE_trolley"))
        .args(["agent", "--file", path(&fixture("open.trly"))])
        .env("TROLLEY_DT", "soon")
        .output()
        .unwrap();
    assert!(!o.status.success());
}
