//! Reactor-centred coordinates.
//!
//! Features of both characters are expressed relative to the reactor's root:
//! translate by minus the reactor root position, then rotate by minus the
//! reactor root angle. The reactor's own root lands at the origin with zero
//! heading.

use crate::kinematics::{keypoints, rotate, sub, Vec2};
use crate::spec::CharacterSpec;
use crate::state::CharacterState;

/// An SE(2) frame given by an origin and a heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Vec2,
    pub heading: f64,
}

impl Frame {
    pub fn of(state: &CharacterState) -> Self {
        Self {
            origin: state.root_pos,
            heading: state.root_angle,
        }
    }

    pub fn point(&self, p: Vec2) -> Vec2 {
        rotate(sub(p, self.origin), -self.heading)
    }

    pub fn vector(&self, v: Vec2) -> Vec2 {
        rotate(v, -self.heading)
    }
}

/// Width of [`features_in`]: positions and velocities of every keypoint.
pub fn feature_len(spec: &CharacterSpec) -> usize {
    4 * spec.num_links()
}

/// Keypoint positions followed by keypoint velocities, both in `frame`.
pub fn features_in(spec: &CharacterSpec, state: &CharacterState, frame: &Frame) -> Vec<f64> {
    let (pos, vel) = keypoints(spec, state);
    let mut out = Vec::with_capacity(feature_len(spec));
    for p in &pos {
        out.extend_from_slice(&frame.point(*p));
    }
    for v in &vel {
        out.extend_from_slice(&frame.vector(*v));
    }
    out
}

/// A character's features in its own root frame.
pub fn self_features(spec: &CharacterSpec, state: &CharacterState) -> Vec<f64> {
    features_in(spec, state, &Frame::of(state))
}

/// `(actor features, reactor features)` in the reactor frame.
pub fn to_reactor_frame(spec: &CharacterSpec, actor: &CharacterState, reactor: &CharacterState) -> (Vec<f64>, Vec<f64>) {
    let frame = Frame::of(reactor);
    (features_in(spec, actor, &frame), features_in(spec, reactor, &frame))
}

/// World up direction and root height seen from the reactor frame.
///
/// Canonicalization discards where the ground is, which a controller under
/// gravity still needs.
pub fn gravity_features(state: &CharacterState) -> [f64; 3] {
    let up = rotate([0.0, 1.0], -state.root_angle);
    [up[0], up[1], state.root_pos[1]]
}
