//! Fixed-width observation vectors built from character states.

use reaction_forge_sim::{
    feature_len, features_in, gravity_features, self_features, CharacterSpec, CharacterState, Frame,
};

/// Single-character state features: keypoints and velocities in the
/// character's own root frame, then the up vector and root height.
pub fn state_features(spec: &CharacterSpec, s: &CharacterState) -> Vec<f64> {
    let mut v = self_features(spec, s);
    v.extend_from_slice(&gravity_features(s));
    v
}

pub fn state_feature_len(spec: &CharacterSpec) -> usize {
    feature_len(spec) + 3
}

/// Reaction-policy input for `(actor_t, reactor_t, actor_{t+1})`, all in the
/// reactor frame at time `t`.
pub fn sim_state_features(
    spec: &CharacterSpec,
    actor: &CharacterState,
    reactor: &CharacterState,
    actor_next: &CharacterState,
) -> Vec<f64> {
    let frame = Frame::of(reactor);
    let mut v = features_in(spec, actor, &frame);
    v.extend(features_in(spec, reactor, &frame));
    v.extend(features_in(spec, actor_next, &frame));
    v.extend_from_slice(&gravity_features(reactor));
    v
}

pub fn sim_state_feature_len(spec: &CharacterSpec) -> usize {
    3 * feature_len(spec) + 3
}

/// Tracker input: own state, the next reference frame seen from the
/// simulated character, and both joint-angle vectors.
pub fn tracker_features(spec: &CharacterSpec, sim: &CharacterState, reference_next: &CharacterState) -> Vec<f64> {
    let mut v = state_features(spec, sim);
    v.extend(features_in(spec, reference_next, &Frame::of(sim)));
    v.extend_from_slice(&reference_next.q);
    v.extend_from_slice(&sim.q);
    v
}

pub fn tracker_feature_len(spec: &CharacterSpec) -> usize {
    state_feature_len(spec) + feature_len(spec) + 2 * spec.num_joints()
}

/// Per-dimension mean and standard deviation used to whiten inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits on `rows`; tiny deviations are floored so constant features stay finite.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for k in 0..dim {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn write_to(&self, ckpt: &mut reaction_forge_nn::Checkpoint, prefix: &str) {
        ckpt.push_vector(&format!("{prefix}.mean"), &self.mean);
        ckpt.push_vector(&format!("{prefix}.std"), &self.std);
    }

    pub fn read_from(ckpt: &reaction_forge_nn::Checkpoint, prefix: &str) -> reaction_forge_nn::Result<Self> {
        Ok(Self {
            mean: ckpt.vector(&format!("{prefix}.mean"))?,
            std: ckpt.vector(&format!("{prefix}.std"))?,
        })
    }
}
