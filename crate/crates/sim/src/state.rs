use serde::{Deserialize, Serialize};

use crate::spec::CharacterSpec;

/// Instantaneous dynamical state of one planar character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterState {
    pub root_pos: [f64; 2],
    pub root_angle: f64,
    pub q: Vec<f64>,
    pub root_vel: [f64; 2],
    pub root_ang_vel: f64,
    pub qd: Vec<f64>,
}

impl CharacterState {
    /// Zero joint angles and velocities with the root at `root_pos`.
    pub fn rest(spec: &CharacterSpec, root_pos: [f64; 2]) -> Self {
        let j = spec.num_joints();
        Self {
            root_pos,
            root_angle: 0.0,
            q: vec![0.0; j],
            root_vel: [0.0; 2],
            root_ang_vel: 0.0,
            qd: vec![0.0; j],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.root_pos.iter().all(|v| v.is_finite())
            && self.root_angle.is_finite()
            && self.root_vel.iter().all(|v| v.is_finite())
            && self.root_ang_vel.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.qd.iter().all(|v| v.is_finite())
    }

    /// Number of scalars in [`Self::to_vec`] for `joints` joints.
    pub fn flat_len(joints: usize) -> usize {
        6 + 2 * joints
    }

    /// `[x, y, θ, q.., vx, vy, ω, q̇..]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::flat_len(self.q.len()));
        v.extend_from_slice(&self.root_pos);
        v.push(self.root_angle);
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.root_vel);
        v.push(self.root_ang_vel);
        v.extend_from_slice(&self.qd);
        v
    }

    pub fn from_slice(v: &[f64], joints: usize) -> Self {
        assert_eq!(v.len(), Self::flat_len(joints));
        let q_end = 3 + joints;
        Self {
            root_pos: [v[0], v[1]],
            root_angle: v[2],
            q: v[3..q_end].to_vec(),
            root_vel: [v[q_end], v[q_end + 1]],
            root_ang_vel: v[q_end + 2],
            qd: v[q_end + 3..].to_vec(),
        }
    }

    /// Generalized positions in simulator order (root coordinates first when
    /// the root is free).
    pub(crate) fn positions(&self, spec: &CharacterSpec) -> Vec<f64> {
        let mut v = Vec::with_capacity(spec.num_dofs());
        if !spec.fixed_root {
            v.extend_from_slice(&[self.root_pos[0], self.root_pos[1], self.root_angle]);
        }
        v.extend_from_slice(&self.q);
        v
    }

    pub(crate) fn velocities(&self, spec: &CharacterSpec) -> Vec<f64> {
        let mut v = Vec::with_capacity(spec.num_dofs());
        if !spec.fixed_root {
            v.extend_from_slice(&[self.root_vel[0], self.root_vel[1], self.root_ang_vel]);
        }
        v.extend_from_slice(&self.qd);
        v
    }

    pub(crate) fn set_positions(&mut self, spec: &CharacterSpec, p: &[f64]) {
        let o = spec.root_dofs();
        if o == 3 {
            self.root_pos = [p[0], p[1]];
            self.root_angle = p[2];
        }
        self.q.copy_from_slice(&p[o..]);
    }

    pub(crate) fn set_velocities(&mut self, spec: &CharacterSpec, v: &[f64]) {
        let o = spec.root_dofs();
        if o == 3 {
            self.root_vel = [v[0], v[1]];
            self.root_ang_vel = v[2];
        } else {
            self.root_vel = [0.0; 2];
            self.root_ang_vel = 0.0;
        }
        self.qd.copy_from_slice(&v[o..]);
    }
}

/// PD targets, one per actuated joint (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action(pub Vec<f64>);

impl Action {
    /// Targets clamped to the joint angle limits.
    pub fn clamped(&self, spec: &CharacterSpec) -> Action {
        Action(
            self.0
                .iter()
                .zip(&spec.joints)
                .map(|(a, j)| a.clamp(j.lower, j.upper))
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}
