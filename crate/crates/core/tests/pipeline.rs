mod common;

use std::collections::BTreeMap;
use std::path::Path;

use reaction_forge::error::ForgeError;
use reaction_forge::pipeline::{
    artifacts, load_config, override_key, pipeline_run, run_stages, split_demos, Run, RunConfig, RunManifest, Stage,
    StageFlags,
};

use common::tiny_run;

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let name = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                if name != artifacts::MANIFEST && name != artifacts::CONFIG {
                    out.insert(name, std::fs::read(&p).unwrap());
                }
            }
        }
    }
    out
}

#[test]
fn unknown_keys_are_config_errors() {
    assert!(matches!(RunConfig::from_json(r#"{"sed": 1}"#), Err(ForgeError::Config(_))));
    assert!(matches!(RunConfig::from_json(r#"{"policy": {"epoch": 3}}"#), Err(ForgeError::Config(_))));
    assert!(matches!(load_config(None, &["policy.epoch=3".into()]), Err(ForgeError::Config(_))));
    assert!(matches!(load_config(None, &["seed".into()]), Err(ForgeError::Config(_))));
    assert!(matches!(load_config(None, &["seed.x=1".into()]), Err(ForgeError::Config(_))));
    assert!(matches!(load_config(None, &["noise_variance=-1".into()]), Err(ForgeError::Config(_))));
    assert!(matches!(load_config(None, &["policy.tau=0".into()]), Err(ForgeError::Config(_))));
}

#[test]
fn overrides_reach_nested_keys() {
    let c = load_config(None, &["policy.epochs=7".into(), "igsl.mode=dagger".into(), "seed=42".into()]).unwrap();
    assert_eq!(c.policy.epochs, 7);
    assert_eq!(c.seed, 42);
    assert_eq!(c.igsl.mode, reaction_forge::igsl::DistillMode::Dagger);
    let mut v = serde_json::json!({ "a": { "b": 1 } });
    override_key(&mut v, "a.b", "[1, 2]").unwrap();
    assert_eq!(v["a"]["b"], serde_json::json!([1, 2]));
    assert!(override_key(&mut v, "a.c", "1").is_err());
}

#[test]
fn config_file_round_trips_through_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let small = RunConfig::small();
    std::fs::write(&path, serde_json::to_string(&small).unwrap()).unwrap();
    assert_eq!(load_config(Some(&path), &[]).unwrap(), small);
    std::fs::write(&path, "{ not json").unwrap();
    assert!(matches!(load_config(Some(&path), &[]), Err(ForgeError::Config(_))));
    assert!(matches!(load_config(Some(&dir.path().join("missing.json")), &[]), Err(ForgeError::Config(_))));
}

#[test]
fn hash_ignores_stage_flags_only() {
    let a = RunConfig::small();
    let b = RunConfig {
        stages: StageFlags::all(false),
        ..a.clone()
    };
    assert_eq!(a.hash(), b.hash());
    let c = RunConfig { seed: 1, ..a.clone() };
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn through_enables_a_prefix() {
    let f = StageFlags::through(Stage::Curate);
    assert!(f.gen_data && f.track && f.curate);
    assert!(!(f.train_vae || f.train_fdm || f.train_policy || f.igsl || f.evaluate));
    assert_eq!(StageFlags::through(Stage::Evaluate), StageFlags::all(true));
}

#[test]
fn disabled_stages_leave_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        stages: StageFlags::all(false),
        ..tiny_run()
    };
    let m = pipeline_run(dir.path(), &config).unwrap();
    assert!(m.stages.is_empty());
    assert_eq!(m.config_hash, config.hash());
    assert_eq!(RunManifest::load(dir.path().join(artifacts::MANIFEST)).unwrap(), m);
}

#[test]
fn a_stage_without_its_inputs_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_stages(dir.path(), &tiny_run(), &[Stage::TrainFdm]).unwrap_err();
    assert!(err.to_string().contains("train-fdm"), "{err}");
}

#[test]
fn demo_split_is_seeded_and_disjoint() {
    let spec = reaction_forge_sim::CharacterSpec::humanoid();
    let demos = common::demos(&spec, 10, 5);
    let (t, v) = split_demos(demos.clone(), 0.15, 3).unwrap();
    assert_eq!(v.len(), 2);
    assert_eq!(t.len(), 8);
    let (t2, _) = split_demos(demos.clone(), 0.15, 3).unwrap();
    assert_eq!(t.iter().map(|d| d.id).collect::<Vec<_>>(), t2.iter().map(|d| d.id).collect::<Vec<_>>());
    assert!(t.iter().all(|d| v.iter().all(|w| w.id != d.id)));
    assert!(split_demos(demos[..1].to_vec(), 0.5, 0).is_err());
}

#[test]
fn resumed_run_matches_an_uninterrupted_one() {
    let config = tiny_run();
    let whole = tempfile::tempdir().unwrap();
    let full = pipeline_run(whole.path(), &config).unwrap();
    let names: Vec<&str> = full.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names, Stage::ALL.iter().map(|s| s.name()).collect::<Vec<_>>());

    let split = tempfile::tempdir().unwrap();
    let mut first = config.clone();
    first.stages = StageFlags::through(Stage::TrainVae);
    let part = pipeline_run(split.path(), &first).unwrap();
    assert_eq!(part.stages.len(), 4);
    let resumed = pipeline_run(split.path(), &config).unwrap();
    assert_eq!(resumed.stages.len(), 8);
    assert_eq!(resumed.without_timestamps(), full.without_timestamps());
    assert_eq!(files(split.path()), files(whole.path()));

    // a finished run does nothing more
    let again = pipeline_run(split.path(), &config).unwrap();
    assert_eq!(again, resumed);

    let other = RunConfig { seed: 9, ..config.clone() };
    assert!(matches!(pipeline_run(split.path(), &other), Err(ForgeError::Config(_))));

    let run = Run::new(whole.path(), config);
    assert!(run.metrics().unwrap().frames > 0);
    for s in &full.stages {
        for a in &s.artifacts {
            assert!(run.path(a).exists(), "{a}");
        }
    }
}
