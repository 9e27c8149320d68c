use std::path::Path;
use std::process::{Command, Output};

fn t2g(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t2g")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&t2g(&[])), 2);
    assert_eq!(code(&t2g(&["frobnicate"])), 2);
    assert_eq!(code(&t2g(&["evaluate", "--workspace", "x", "--model", "gcn"])), 2);
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let out = t2g(&["ingest", "--schema", "nope.json", "--data-dir", "nope", "--out", s(&ws)]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    assert_eq!(code(&t2g(&["distill", "--workspace", s(&ws)])), 2);
    assert_eq!(code(&t2g(&["report", "--workspace", s(&ws)])), 2);
}

#[test]
fn full_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ws = dir.path().join("ws");
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"ratio": 0.05, "hidden": 16, "pretrain_epochs": 4, "distill_iters": 10, "eval_epochs": 10}"#).unwrap();

    let ok = |args: &[&str]| {
        let out = t2g(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["gen-minirdb", "--rows", "200", "--out", s(&data)]);
    assert!(data.join("schema.json").exists());
    ok(&["ingest", "--schema", s(&data.join("schema.json")), "--data-dir", s(&data), "--out", s(&ws), "--config", s(&cfg)]);
    ok(&["pretrain", "--workspace", s(&ws)]);
    assert!(ok(&["pretrain", "--workspace", s(&ws)]).contains("up to date"));
    ok(&["distill", "--workspace", s(&ws), "--beta", "0.5"]);
    assert!(ws.join("artifact.t2g").exists());
    ok(&["evaluate", "--workspace", s(&ws), "--model", "mlp", "--repeats", "3", "--baseline", "random,full"]);
    ok(&["report", "--workspace", s(&ws)]);

    assert_eq!(code(&t2g(&["evaluate", "--workspace", s(&ws), "--repeats", "1"])), 2);
    assert_eq!(code(&t2g(&["distill", "--workspace", s(&ws), "--rho", "1.5"])), 2);
}
