//! End-to-end runs of the `sceneaug` binary.

use std::path::Path;
use std::process::{Command, Output};

fn sceneaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sceneaug")).args(args).env_remove("SCENEAUG_PARAPHRASE_ENDPOINT").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sceneaug(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(sceneaug(&["--help"]).status.code(), Some(0));
    assert_eq!(sceneaug(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sceneaug(&["datagen", "--bogus"]).status.code(), Some(2));
    assert_eq!(sceneaug(&["evaluate", "--model", "m.json"]).status.code(), Some(2));
    let missing = sceneaug(&["inspect", "/nonexistent/scene.json"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn malformed_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "bins = \"many\"\n").unwrap();
    let out = sceneaug(&["datagen", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bins"));
}

#[test]
fn train_then_generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.json");
    ok(&["datagen", "--out", s(&data), "--scenes", "3", "--seed", "5"]);
    let scene = std::fs::read_dir(data.join("scenes")).unwrap().next().unwrap().unwrap().path();
    ok(&["train", "--data", s(&data), "--out", s(&model), "--steps", "5", "--log", s(&dir.path().join("log.jsonl"))]);
    assert!(ok(&["inspect", s(&model)]).contains("scalars"));

    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["generate", "--model", s(&model), "--scene", s(&scene), "--text", "place a red chair near the lamp", "--out", s(&out), "--k", "2", "--seed", "9"]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for i in 0..2 {
        let pa = std::fs::read(a.join(format!("candidate_{i}.ply"))).unwrap();
        let pb = std::fs::read(b.join(format!("candidate_{i}.ply"))).unwrap();
        assert!(!pa.is_empty());
        assert_eq!(pa, pb);
        assert!(a.join(format!("augmented_{i}.json")).exists());
    }
    assert!(ok(&["inspect", s(&a.join("candidate_0.ply"))]).contains("vertices"));
}

#[test]
fn evaluating_a_scene_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["datagen", "--out", s(&data), "--scenes", "1", "--seed", "3"]);
    let scene = std::fs::read_dir(data.join("scenes")).unwrap().next().unwrap().unwrap().path();
    let json = ok(&["evaluate", "--generated", s(&scene), "--reference", s(&scene)]);
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    let micro = &report["micro_avg"];
    assert_eq!(micro["mmd"].as_f64(), Some(0.0));
    assert_eq!(micro["cov"].as_f64(), Some(1.0));
    assert!(micro["jsd"].as_f64().unwrap() < 1e-12);
}

#[test]
fn transform_with_the_builtin_rewriter() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "{\"id\":\"s1\",\"text\":\"Find the chair near the window.\"}\n{\"id\":\"s2\",\"text\":\"The lamp that is not on the desk.\"}\n").unwrap();
    let output = dir.path().join("out.jsonl");
    ok(&["transform", "--input", s(&input), "--output", s(&output), "--seed", "1"]);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["id"], "s1");
}
