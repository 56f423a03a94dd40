mod common;

use std::path::Path;
use std::process::{Command, Output};

fn forge(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_reaction-forge"));
    c.args(args);
    match threads {
        Some(t) => c.env("REACTION_FORGE_THREADS", t),
        None => c.env_remove("REACTION_FORGE_THREADS"),
    };
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&common::tiny_run()).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run = run.to_str().unwrap();
    assert_eq!(code(&forge(&["gen-data", "--run", run, "--set", "synth.pairz=3"], None)), 2);
    assert_eq!(code(&forge(&["gen-data", "--run", run, "--set", "noise_variance=-0.5"], None)), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "unknown": true}"#).unwrap();
    assert_eq!(code(&forge(&["pipeline", "--run", run, "--config", bad.to_str().unwrap()], None)), 2);
    assert_eq!(code(&forge(&["no-such-command"], None)), 2);
    let o = forge(&["gen-data", "--run", run], Some("zero"));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("REACTION_FORGE_THREADS"));
    assert_eq!(code(&forge(&["gen-data", "--run", run], Some("0"))), 2);
}

#[test]
fn missing_inputs_are_stage_failures() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("empty");
    let o = forge(&["train-fdm", "--run", run.to_str().unwrap()], None);
    assert_eq!(code(&o), 3);
    let o = forge(
        &["rollout", "--actor", "nope.rfmo", "--ckpt", "nope.ckpt", "--out", dir.path().join("o.rfmo").to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn data_then_render() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let o = forge(&["gen-data", "--run", run.to_str().unwrap(), "--config", &cfg], Some("2"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gen-data"));
    let motion = std::fs::read_dir(run.join("corpus/test")).unwrap().next().unwrap().unwrap().path();
    let frames = dir.path().join("frames");
    let o = forge(&["render", "--motion", motion.to_str().unwrap(), "--out", frames.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_dir(&frames).unwrap().count() >= 40);
}
