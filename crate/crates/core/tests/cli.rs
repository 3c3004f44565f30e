use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use romkit::cli::{OPERATOR_FILE, REPORT_CSV, REPORT_JSON, SNAPSHOT_FILE};

fn romkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_romkit")).args(args).output().unwrap()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(REPORT_JSON)).unwrap()).unwrap()
}

#[test]
fn heat_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (op, on, ev) = (tmp.path().join("op"), tmp.path().join("on"), tmp.path().join("ev"));
    let cfg = config("heat2d.json");

    ok(&romkit(&["offline", "--config", s(&cfg), "--out", s(&op)]));
    let again = romkit(&["offline", "--config", s(&cfg), "--out", s(&op)]);
    ok(&again);
    assert!(String::from_utf8_lossy(&again.stdout).contains("\"loaded\""));

    let before: Vec<Vec<u8>> = [OPERATOR_FILE, SNAPSHOT_FILE]
        .iter()
        .map(|f| std::fs::read(op.join(f)).unwrap())
        .collect();

    ok(&romkit(&["online", "--op", s(&op), "--nparams", "3", "--seed", "7", "--out", s(&on)]));
    ok(&romkit(&["eval", "--op", s(&op), "--online", s(&on), "--out", s(&ev)]));

    let r = report(&ev);
    for key in ["error", "speedup_time", "speedup_memory", "per_param_errors", "config"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    let err = r["error"].as_f64().unwrap();
    assert!(err > 0.0 && err < 1e-3, "error {err}");
    assert_eq!(r["per_param_errors"].as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(ev.join(REPORT_CSV)).unwrap().starts_with("key,value\n"));

    for (f, b) in [OPERATOR_FILE, SNAPSHOT_FILE].iter().zip(&before) {
        assert_eq!(&std::fs::read(op.join(f)).unwrap(), b, "{f} changed");
    }

    let ev2 = tmp.path().join("ev2");
    ok(&romkit(&["eval", "--op", s(&op), "--online", s(&on), "--out", s(&ev2)]));
    let r2 = report(&ev2);
    assert_eq!(r["error"], r2["error"]);
    assert_eq!(r["per_param_errors"], r2["per_param_errors"]);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = romkit(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));
}

#[test]
fn missing_operator_is_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    let op = tmp.path().join("absent");
    let out = romkit(&["online", "--op", s(&op), "--out", s(&tmp.path().join("on"))]);
    assert_eq!(out.status.code(), Some(2));
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert_eq!(v["error"], "not_found");
}

#[test]
fn bench_writes_csv() {
    let out = romkit(&["bench", "--sizes", "4", "--params", "1,2", "--reps", "1"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("size,P,path,wall_ns,alloc_bytes"));
    assert!(lines.count() >= 4);
}
