//! Drives the `pcdgen` binary through its subcommands.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn pcdgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcdgen"))
        .args(args)
        .env_remove("PCDGEN_JOBS")
        .output()
        .unwrap()
}

fn scene(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenes/{name}.toml"));
    p.to_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn last_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn argument_errors_exit_two_and_help_exits_zero() {
    assert_eq!(pcdgen(&["--help"]).status.code(), Some(0));
    assert_eq!(pcdgen(&[]).status.code(), Some(2));
    assert_eq!(pcdgen(&["generate", "--scene", "x"]).status.code(), Some(2));
    assert_eq!(pcdgen(&["process", "--in", "a", "--out", "b", "--fill", "stretch"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = pcdgen(&["synth", "--spec", s(&dir.path().join("missing.toml")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn print_config_reflects_overrides() {
    let out = pcdgen(&["--print-config", "synth", "--spec", "x", "--out", "y", "--seed", "42"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "seed = 42"), "{text}");
    assert!(text.contains("[processor]"));
}

#[test]
fn synth_parse_generate_validate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.toml");
    std::fs::write(&cfg, "seed = 5\n[sampler]\nreplays = 1\ncombinations = 2\nperturbations = 1\n").unwrap();

    let out = pcdgen(&["synth", "--spec", &scene("pick_place"), "--out", s(&d.join("s")), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(last_json(&out)["skills"], 2);

    let out = pcdgen(&["parse", "--demo", s(&d.join("s/demo")), "--tracking", s(&d.join("s/tracking")), "--out", s(&d.join("scene"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let ann = d.join("s/annotation.json");
    let out = pcdgen(&[
        "generate", "--config", s(&cfg), "--scene", s(&d.join("scene")), "--annotation", s(&ann), "--out", s(&d.join("gen")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = last_json(&out);
    assert_eq!(summary["generated"], 2);
    assert!(summary["effective_camera"]["width"].as_u64().unwrap() <= 320);

    let out = pcdgen(&["validate", "--dataset", s(&d.join("gen")), "--scene", s(&d.join("scene")), "--annotation", s(&ann)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(last_json(&out)["ok"], true);

    let out = pcdgen(&["inspect", "--demo", s(&d.join("gen/demo_000000")), "--depth-out", s(&d.join("f1.pgm"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read(d.join("f1.pgm")).unwrap().starts_with(b"P5"));
}
