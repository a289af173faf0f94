mod common;

use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use common::*;
use serde_json::Value;

fn overrow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overrow")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn size_all_prints_six_surfaces() {
    let o = overrow(&["size", "--all", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert!(r["deviation"].as_f64().unwrap().abs() <= 0.10, "{r}");
    }
}

#[test]
fn size_with_the_bundled_library_matches_the_default() {
    let lib = scenario_dir().join("terrains.toml");
    let a = overrow(&["size", "--all", "--json"]);
    let b = overrow(&["size", "--all", "--json", "--library", path(&lib)]);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn size_rejects_unknown_terrain_and_bad_library() {
    assert_eq!(overrow(&["size", "--terrain", "ice"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib.toml");
    std::fs::write(&lib, "[[terrain]]\nname = \"x\"\nc_rr_min = 0.5\nc_rr_max = 0.1\n").unwrap();
    assert_eq!(overrow(&["size", "--library", path(&lib)]).status.code(), Some(2));
}

#[test]
fn simulate_then_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let cfg = scenario_dir().join("row_pass.toml");
    let o = overrow(&["simulate", "--config", path(&cfg), "--out", path(&log)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let expected = run_bundled("row_pass");
    assert!(stdout(&o).contains(&expected.sha256()));
    assert_eq!(std::fs::read_to_string(&log).unwrap(), expected.to_text());

    let ok = overrow(&["replay", path(&log), "--config", path(&cfg)]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).starts_with("PASS"));

    let text = std::fs::read_to_string(&log).unwrap();
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, text.replacen("\"timestamp\":1000,", "\"timestamp\":1001,", 1)).unwrap();
    let bad = overrow(&["replay", path(&tampered)]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(stdout(&bad).starts_with("FAIL first divergence at line"));

    // same log checked against another scenario
    let other = scenario_dir().join("headland.toml");
    assert_eq!(overrow(&["replay", path(&log), "--config", path(&other)]).status.code(), Some(2));
}

#[test]
fn invalid_scenario_exits_with_config_error_listing_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "dt_s = 0.0015\n[chassis]\nmass_kg = 0\n").unwrap();
    let o = overrow(&["simulate", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dt_s") && err.contains("mass"), "{err}");
    assert_eq!(overrow(&["simulate", "--config", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn bad_trace_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    std::fs::write(&trace, "{\"t_ms\": 0, \"silent\": true}\n{\"t_ms\": 10, \"speed\": 1}\n").unwrap();
    let cfg = scenario_dir().join("row_pass.toml");
    let o = overrow(&["simulate", "--config", path(&cfg), "--trace", path(&trace)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn serve_writes_its_log_on_stop() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("serve.jsonl");
    let cfg = scenario_dir().join("row_pass.toml");
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let child = Command::new(env!("CARGO_BIN_EXE_overrow"))
        .args(["serve", "--config", path(&cfg), "--listen", &addr, "--lockstep", "--out", path(&log)])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let stream = loop {
        match TcpStream::connect(&addr) {
            Ok(s) => break s,
            Err(_) if start.elapsed() < Duration::from_secs(10) => std::thread::sleep(Duration::from_millis(20)),
            Err(e) => panic!("{e}"),
        }
    };
    let (mut ws, _) = tungstenite::client(format!("ws://{addr}/"), stream).unwrap();
    for m in [r#"{"type":"step","n":25}"#, r#"{"type":"stop"}"#] {
        ws.send(tungstenite::Message::text(m)).unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(overrow::runlog::replay(&text, None).unwrap().passed());
    assert!(stdout(&out).contains("duration        0.50 s"));

    assert_eq!(overrow(&["serve", "--config", path(&cfg), "--telemetry-hz", "0"]).status.code(), Some(2));
}
