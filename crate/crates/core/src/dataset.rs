//! Noise injection and train/test splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use reaction_forge_nn::stream;

use crate::error::{ForgeError, Result};
use crate::motion::{InteractionPair, MotionSequence};
use crate::synth::finite_difference_velocities;
use crate::tracker::{Demo, Trajectory};

/// Adds i.i.d. `N(0, variance)` noise to the joint angles of every frame,
/// then recomputes velocities by finite differences. The root is untouched.
pub fn add_noise(seq: &MotionSequence, variance: f64, seed: u64) -> Result<MotionSequence> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(ForgeError::Config(format!("noise variance must be ≥ 0, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(seq.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("positive std");
    let mut rng = stream(seed, "noise");
    let mut out = seq.clone();
    for s in &mut out.states {
        for q in &mut s.q {
            *q += normal.sample(&mut rng);
        }
    }
    finite_difference_velocities(&mut out.states, out.fps);
    Ok(out)
}

/// Noise for both tracks of a pair, on independent sub-streams.
pub fn add_noise_pair(pair: &InteractionPair, variance: f64, seed: u64) -> Result<InteractionPair> {
    let actor = add_noise(&pair.actor, variance, reaction_forge_nn::derive_seed(seed, &format!("{}/actor", pair.id)))?;
    let reactor = add_noise(&pair.reactor, variance, reaction_forge_nn::derive_seed(seed, &format!("{}/reactor", pair.id)))?;
    InteractionPair::new(pair.id, actor, reactor)
}

fn noisy_trajectory(traj: &Trajectory, family: &str, variance: f64, seed: u64) -> Result<Trajectory> {
    let seq = MotionSequence {
        fps: traj.fps,
        family: family.to_string(),
        states: traj.states.clone(),
    };
    Ok(Trajectory {
        states: add_noise(&seq, variance, seed)?.states,
        ..traj.clone()
    })
}

/// Pose noise on the recorded states of both tracks of a demonstration.
/// Actions are kept, so the result no longer replays exactly.
pub fn add_noise_demo(demo: &Demo, variance: f64, seed: u64) -> Result<Demo> {
    let seed_for = |role: &str| reaction_forge_nn::derive_seed(seed, &format!("{}/{role}", demo.id));
    Ok(Demo {
        actor: noisy_trajectory(&demo.actor, &demo.family, variance, seed_for("actor"))?,
        reactor: noisy_trajectory(&demo.reactor, &demo.family, variance, seed_for("reactor"))?,
        ..demo.clone()
    })
}

/// Stratified split: `⌊ratio · n_f⌋` pairs of each family go to train.
pub fn split(corpus: &[InteractionPair], ratio: f64, seed: u64) -> Result<(Vec<InteractionPair>, Vec<InteractionPair>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ForgeError::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut by_family: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.iter().enumerate() {
        by_family.entry(p.family()).or_default().push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (family, mut idx) in by_family {
        let mut rng = stream(seed, &format!("split/{family}"));
        idx.shuffle(&mut rng);
        let k = (ratio * idx.len() as f64).floor() as usize;
        train_idx.extend_from_slice(&idx[..k]);
        test_idx.extend_from_slice(&idx[k..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        train_idx.into_iter().map(|i| corpus[i].clone()).collect(),
        test_idx.into_iter().map(|i| corpus[i].clone()).collect(),
    ))
}
