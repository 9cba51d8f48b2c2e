use std::path::PathBuf;
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_craftflow"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn clean_fixture_validates() {
    let o = run(&["validate", &fixture("spoon.cwn")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 violations"));
}

#[test]
fn violations_exit_one_and_list_as_json() {
    let o = run(&["--json", "validate", &fixture("ingest/gap-then-clean/attempt-1.json")]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["code"], "TemporalGap");
}

#[test]
fn parse_errors_point_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cwn");
    std::fs::write(&bad, "workflow \"w\" duration=10\nthing a \"x\" @0..10\nthing b oops\n").unwrap();
    let o = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with(&format!("{}:3:", bad.display())), "{err}");
}

#[test]
fn schema_errors_name_the_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"version": 7}"#).unwrap();
    let o = run(&["--json", "parse", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["error"]["schema"]["json_pointer"].is_string());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["validate", "no-such-file.cwn"]).status.code(), Some(2));
    assert_eq!(run(&["parse", "Cargo.toml"]).status.code(), Some(2));
}

#[test]
fn knitting_diff_has_one_record() {
    let o = run(&["--json", "diff", &fixture("knit-base.cwn"), &fixture("knit-executed.cwn")]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let records = v["records"].as_array().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["base_path"], serde_json::json!(["knit every other needle"]));
    assert_eq!(records[0]["executed_path"], serde_json::json!(["knit every needle"]));

    let same = run(&["diff", &fixture("knit-base.cwn"), &fixture("knit-base.cwn")]);
    assert_eq!(same.status.code(), Some(0));
}

#[test]
fn convert_round_trip_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    for name in ["spoon.cwn", "crane.cwn", "sketch.cwn"] {
        assert!(run(&["convert", &fixture(name), &p("a.json")]).status.success());
        assert!(run(&["convert", &p("a.json"), &p("b.cwn")]).status.success());
        assert!(run(&["convert", &p("b.cwn"), &p("c.json")]).status.success());
        assert!(run(&["convert", &p("c.json"), &p("d.cwn")]).status.success());
        let read = |n: &str| std::fs::read(p(n)).unwrap();
        assert_eq!(read("a.json"), read("c.json"), "{name}");
        assert_eq!(read("b.cwn"), read("d.cwn"), "{name}");
    }
}

#[test]
fn parse_reports_the_pattern_census() {
    let o = run(&["--json", "parse", &fixture("crane.cwn")]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["id"], "crane");
    assert!(v["patterns"].is_object());
}

#[test]
fn views_shrink_and_render() {
    let count = |level: &str| {
        let o = run(&["--json", "view", &fixture("spoon.cwn"), "--level", level]);
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["visible"].as_array().unwrap().len()
    };
    let (low, medium, high) = (count("low"), count("medium"), count("high"));
    assert!(low <= medium && medium <= high, "{low} {medium} {high}");
    let dot = stdout(&run(&["view", &fixture("spoon.cwn"), "--collapse", "S2", "--dot"]));
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("Detail work"));
    assert_eq!(run(&["view", &fixture("spoon.cwn"), "--collapse", "S9"]).status.code(), Some(2));
}

#[test]
fn mock_ingest_retries_then_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("drafted.cwn");
    let o = run(&[
        "--json",
        "ingest",
        "file:videos/gap-then-clean.mp4",
        "--duration-s",
        "120",
        "--provider",
        "mock",
        "--fixtures",
        &fixture("ingest"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["report"]["attempts"].as_array().unwrap().len(), 2);
    assert!(run(&["validate", out.to_str().unwrap()]).status.success());

    let o = run(&[
        "ingest",
        "file:videos/always-disconnected.mp4",
        "--duration-s",
        "120",
        "--provider",
        "mock",
        "--fixtures",
        &fixture("ingest"),
        "--max-retries",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Disconnected"));
}
