mod common;

use std::collections::BTreeMap;

use reaction_forge::dataset::{add_noise, add_noise_demo, split};
use reaction_forge::error::ForgeError;
use reaction_forge::motion::{decode_motion, encode_motion, load_corpus, load_motion, save_corpus, save_motion};
use reaction_forge::synth::{synth_interactions, FamilyWeight, SynthConfig, MIRROR_FOLLOW};
use reaction_forge_sim::{keypoints, CharacterSpec};

fn small(pairs: usize) -> SynthConfig {
    SynthConfig {
        pairs,
        min_len: 20,
        max_len: 40,
        ..Default::default()
    }
}

#[test]
fn corpus_is_byte_identical_for_a_fixed_seed() {
    let spec = CharacterSpec::humanoid();
    let a = synth_interactions(&spec, &small(12), 3).unwrap();
    let b = synth_interactions(&spec, &small(12), 3).unwrap();
    let bytes = |c: &[_]| c.iter().map(encode_motion).collect::<Vec<_>>();
    assert_eq!(bytes(&a), bytes(&b));
    let c = synth_interactions(&spec, &small(12), 4).unwrap();
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn family_histogram_matches_weights() {
    let spec = CharacterSpec::humanoid();
    let mut cfg = small(200);
    cfg.families = vec![
        FamilyWeight { name: "approach-and-handshake".into(), weight: 1 },
        FamilyWeight { name: "push-and-recoil".into(), weight: 2 },
        FamilyWeight { name: "mirror-follow".into(), weight: 3 },
        FamilyWeight { name: "circle-around".into(), weight: 4 },
    ];
    let corpus = synth_interactions(&spec, &cfg, 1).unwrap();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &corpus {
        *counts.entry(p.family()).or_default() += 1;
    }
    // 200 split 1:2:3:4
    assert_eq!(counts["approach-and-handshake"], 20);
    assert_eq!(counts["push-and-recoil"], 40);
    assert_eq!(counts["mirror-follow"], 60);
    assert_eq!(counts["circle-around"], 80);
}

#[test]
fn mirror_follow_reflects_across_the_midline() {
    let spec = CharacterSpec::humanoid();
    let mut cfg = small(4);
    cfg.families = vec![
        FamilyWeight { name: MIRROR_FOLLOW.into(), weight: 1 },
        FamilyWeight { name: "circle-around".into(), weight: 1 },
    ];
    let corpus = synth_interactions(&spec, &cfg, 9).unwrap();
    let pair = corpus.iter().find(|p| p.family() == MIRROR_FOLLOW).unwrap();
    for (a, r) in pair.actor.states.iter().zip(&pair.reactor.states) {
        let mid = 0.5 * (a.root_pos[0] + r.root_pos[0]);
        let (ka, _) = keypoints(&spec, a);
        let (kr, _) = keypoints(&spec, r);
        for (p, q) in ka.iter().zip(&kr) {
            assert!((2.0 * mid - p[0] - q[0]).abs() < 1e-5, "x {p:?} vs {q:?}");
            assert!((p[1] - q[1]).abs() < 1e-5, "y {p:?} vs {q:?}");
        }
    }
}

#[test]
fn zero_noise_is_the_identity() {
    let spec = CharacterSpec::humanoid();
    let pair = &synth_interactions(&spec, &small(1), 2).unwrap()[0];
    assert_eq!(add_noise(&pair.actor, 0.0, 5).unwrap(), pair.actor);
}

#[test]
fn noise_sample_variance_matches() {
    let spec = CharacterSpec::humanoid();
    let mut seq = synth_interactions(&spec, &small(1), 2).unwrap()[0].actor.clone();
    let base = seq.states[0].clone();
    seq.states = vec![base; 10_000];
    let noisy = add_noise(&seq, 0.01, 7).unwrap();
    let diffs: Vec<f64> = noisy
        .states
        .iter()
        .zip(&seq.states)
        .flat_map(|(n, c)| n.q.iter().zip(&c.q).map(|(a, b)| a - b).collect::<Vec<_>>())
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    assert!((var - 0.01).abs() < 0.001, "sample variance {var}");
}

#[test]
fn noise_changes_velocities() {
    let spec = CharacterSpec::humanoid();
    let pair = &synth_interactions(&spec, &small(1), 2).unwrap()[0];
    let noisy = add_noise(&pair.actor, 0.05, 1).unwrap();
    assert!(noisy.states.iter().zip(&pair.actor.states).any(|(n, c)| n.qd != c.qd));
}

#[test]
fn negative_variance_is_a_config_error() {
    let spec = CharacterSpec::humanoid();
    let pair = &synth_interactions(&spec, &small(1), 2).unwrap()[0];
    assert!(matches!(add_noise(&pair.actor, -0.1, 1), Err(ForgeError::Config(_))));
}

#[test]
fn motion_round_trip_is_exact() {
    let spec = CharacterSpec::humanoid();
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_interactions(&spec, &small(3), 11).unwrap();
    for p in &corpus {
        let path = dir.path().join("clip.rfmo");
        save_motion(&path, p).unwrap();
        let back = load_motion(&path).unwrap();
        assert_eq!(back.len(), p.len());
        for (x, y) in back.actor.states.iter().chain(&back.reactor.states).zip(p.actor.states.iter().chain(&p.reactor.states)) {
            for (u, v) in x.to_vec().iter().zip(y.to_vec()) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }
    save_corpus(dir.path().join("corpus"), &corpus).unwrap();
    let back = load_corpus(dir.path().join("corpus")).unwrap();
    assert_eq!(back, corpus);
}

#[test]
fn truncated_clip_is_a_format_error() {
    let spec = CharacterSpec::humanoid();
    let bytes = encode_motion(&synth_interactions(&spec, &small(1), 2).unwrap()[0]);
    for cut in [0, 3, 10, 24, bytes.len() - 1] {
        assert!(matches!(decode_motion(&bytes[..cut]), Err(ForgeError::Format { .. })), "cut at {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_motion(&extra), Err(ForgeError::Format { .. })));
}

#[test]
fn little_endian_fixture_decodes() {
    // written by an independent encoder; values are exact in f32
    let pair = load_motion(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/one_frame_j1.rfmo")).unwrap();
    assert_eq!(pair.fps(), 30.0);
    assert_eq!(pair.len(), 1);
    assert_eq!(pair.actor.states[0].to_vec(), vec![1.0, 0.5, -0.25, 0.125, 2.0, -1.0, 0.75, -0.5]);
    assert_eq!(pair.reactor.states[0].to_vec(), vec![-1.0, 1.5, 0.25, -0.125, 0.0, 0.0, 3.0, 0.5]);
}

#[test]
fn split_is_stratified_disjoint_and_seeded() {
    let spec = CharacterSpec::humanoid();
    let corpus = synth_interactions(&spec, &small(42), 5).unwrap();
    let (train, test) = split(&corpus, 0.7, 1).unwrap();
    assert_eq!(train.len() + test.len(), corpus.len());
    let ids: Vec<usize> = train.iter().map(|p| p.id).collect();
    assert!(test.iter().all(|p| !ids.contains(&p.id)));
    let mut per_family: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for p in &corpus {
        per_family.entry(p.family()).or_default().0 += 1;
    }
    for p in &train {
        per_family.get_mut(p.family()).unwrap().1 += 1;
    }
    for (f, (n, k)) in per_family {
        assert_eq!(k, (0.7 * n as f64).floor() as usize, "family {f}");
    }
    let (again, _) = split(&corpus, 0.7, 1).unwrap();
    assert_eq!(again, train);
    assert!(split(&corpus, 1.0, 1).is_err());
}

#[test]
fn noise_leaves_the_root_alone() {
    let spec = CharacterSpec::humanoid();
    let pair = &synth_interactions(&spec, &small(1), 2).unwrap()[0];
    let noisy = add_noise(&pair.actor, 0.05, 3).unwrap();
    for (n, c) in noisy.states.iter().zip(&pair.actor.states) {
        assert_eq!((n.root_pos, n.root_angle), (c.root_pos, c.root_angle));
    }
}

#[test]
fn demo_noise_keeps_actions_and_is_seeded() {
    let spec = CharacterSpec::humanoid();
    let demo = &common::demos(&spec, 1, 20)[0];
    let a = add_noise_demo(demo, 0.01, 4).unwrap();
    assert_eq!(a, add_noise_demo(demo, 0.01, 4).unwrap());
    assert_eq!(a.actor.actions, demo.actor.actions);
    assert_eq!(a.reactor.actions, demo.reactor.actions);
    assert_ne!(a.reactor.states, demo.reactor.states);
    assert_ne!(a.actor.states[3].q, a.reactor.states[3].q);
    assert_eq!(add_noise_demo(demo, 0.0, 4).unwrap(), *demo);
}
