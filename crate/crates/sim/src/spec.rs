use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub const SCHEMA_VERSION: u32 = 1;

/// One rigid capsule of the articulated body. Link 0 is the root; every other
/// link hangs off a parent through a revolute joint (joint `j` drives link
/// `j + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub parent: Option<usize>,
    /// Distance along the parent's axis where this link is attached (m).
    pub attach: f64,
    /// Angle relative to the parent at zero joint angle (rad). For the root it
    /// is the offset between the root orientation and the link axis.
    pub rest_angle: f64,
    pub length: f64,
    pub radius: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterSpec {
    pub schema_version: u32,
    pub name: String,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub gravity: [f64; 2],
    /// Control period (s).
    pub control_dt: f64,
    pub substeps: usize,
    /// Coulomb coefficient for ground contact.
    pub friction: f64,
    /// Pin the root link in place (pendulums and test rigs).
    #[serde(default)]
    pub fixed_root: bool,
    /// Whether a ground line at `y = 0` is present.
    #[serde(default = "default_true")]
    pub ground: bool,
}

fn default_true() -> bool {
    true
}

impl CharacterSpec {
    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    /// Generalized degrees of freedom: joints plus three root coordinates when
    /// the root is free.
    pub fn num_dofs(&self) -> usize {
        self.joints.len() + if self.fixed_root { 0 } else { 3 }
    }

    pub fn root_dofs(&self) -> usize {
        if self.fixed_root {
            0
        } else {
            3
        }
    }

    pub fn substep_dt(&self) -> f64 {
        self.control_dt / self.substeps as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn max_radius(&self) -> f64 {
        self.links.iter().map(|l| l.radius).fold(0.0, f64::max)
    }

    /// Rotational inertia of a link about its centre of mass (thin rod plus
    /// a disc term for the capsule radius).
    pub fn link_inertia(&self, i: usize) -> f64 {
        let l = &self.links[i];
        l.mass * (l.length * l.length / 12.0 + l.radius * l.radius / 4.0)
    }

    /// Links from `link` up to (excluding) the root, nearest first.
    pub fn chain(&self, link: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut m = link;
        while let Some(p) = self.links[m].parent {
            out.push(m);
            m = p;
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidSpec(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        if self.links.is_empty() {
            return bad("no links".into());
        }
        if self.links[0].parent.is_some() {
            return bad("link 0 must be the root".into());
        }
        if self.joints.len() + 1 != self.links.len() {
            return bad(format!(
                "{} links need {} joints, found {}",
                self.links.len(),
                self.links.len() - 1,
                self.joints.len()
            ));
        }
        for (i, l) in self.links.iter().enumerate() {
            if i > 0 {
                match l.parent {
                    Some(p) if p < i => {}
                    _ => return bad(format!("link `{}` must have a parent listed before it", l.name)),
                }
            }
            if !(l.mass > 0.0 && l.length > 0.0 && l.radius > 0.0) {
                return bad(format!("link `{}` needs positive mass, length and radius", l.name));
            }
            if !(l.attach.is_finite() && l.rest_angle.is_finite()) {
                return bad(format!("link `{}` has non-finite geometry", l.name));
            }
        }
        for j in &self.joints {
            if !(j.kp >= 0.0 && j.kd >= 0.0) {
                return bad(format!("joint `{}` has negative gains", j.name));
            }
            if !(j.torque_limit > 0.0 && j.lower <= j.upper) {
                return bad(format!("joint `{}` has invalid limits", j.name));
            }
        }
        if !(self.control_dt > 0.0 && self.substeps > 0) {
            return bad("control_dt and substeps must be positive".into());
        }
        if !(self.friction >= 0.0) || self.gravity.iter().any(|g| !g.is_finite()) {
            return bad("friction must be non-negative and gravity finite".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Planar humanoid: torso (root), head, two-segment arms and legs; nine
    /// actuated joints. Gains scale with the mass of the driven link.
    pub fn humanoid() -> Self {
        let link = |name: &str, parent: Option<usize>, attach: f64, rest: f64, length: f64, radius: f64, mass: f64| LinkSpec {
            name: name.into(),
            parent,
            attach,
            rest_angle: rest,
            length,
            radius,
            mass,
        };
        let torso_len = 0.5;
        let links = vec![
            link("torso", None, 0.0, FRAC_PI_2, torso_len, 0.1, 30.0),
            link("head", Some(0), torso_len, 0.0, 0.2, 0.1, 5.0),
            link("upper_arm_l", Some(0), torso_len, PI, 0.3, 0.045, 2.5),
            link("forearm_l", Some(2), 0.3, 0.0, 0.3, 0.04, 1.5),
            link("upper_arm_r", Some(0), torso_len, PI, 0.3, 0.045, 2.5),
            link("forearm_r", Some(4), 0.3, 0.0, 0.3, 0.04, 1.5),
            link("thigh_l", Some(0), 0.0, PI, 0.45, 0.06, 8.0),
            link("shin_l", Some(6), 0.45, 0.0, 0.45, 0.05, 4.0),
            link("thigh_r", Some(0), 0.0, PI, 0.45, 0.06, 8.0),
            link("shin_r", Some(8), 0.45, 0.0, 0.45, 0.05, 4.0),
        ];
        let names = [
            "neck", "shoulder_l", "elbow_l", "shoulder_r", "elbow_r", "hip_l", "knee_l", "hip_r",
            "knee_r",
        ];
        let limits = [1.0, 3.0, 2.6, 3.0, 2.6, 2.0, 2.6, 2.0, 2.6];
        let joints = names
            .iter()
            .zip(limits)
            .enumerate()
            .map(|(j, (name, lim))| {
                let m = links[j + 1].mass;
                JointSpec {
                    name: (*name).into(),
                    kp: 300.0 * m,
                    kd: 30.0 * m,
                    torque_limit: 200.0,
                    lower: -lim,
                    upper: lim,
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            name: "humanoid2d".into(),
            links,
            joints,
            gravity: [0.0, -9.81],
            control_dt: 1.0 / 30.0,
            substeps: 8,
            friction: 0.8,
            fixed_root: false,
            ground: true,
        }
    }

    /// A single free capsule; used for ballistic and resting-contact checks.
    pub fn single_link(length: f64, radius: f64, mass: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "capsule".into(),
            links: vec![LinkSpec {
                name: "body".into(),
                parent: None,
                attach: 0.0,
                rest_angle: 0.0,
                length,
                radius,
                mass,
            }],
            joints: vec![],
            gravity: [0.0, -9.81],
            control_dt: 1.0 / 30.0,
            substeps: 8,
            friction: 0.8,
            fixed_root: false,
            ground: true,
        }
    }

    /// Pinned, massless-looking base with one swinging link and no ground.
    pub fn pendulum(length: f64, mass: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "pendulum".into(),
            links: vec![
                LinkSpec {
                    name: "base".into(),
                    parent: None,
                    attach: 0.0,
                    rest_angle: 0.0,
                    length: 0.01,
                    radius: 0.01,
                    mass: 1.0,
                },
                LinkSpec {
                    name: "bob".into(),
                    parent: Some(0),
                    attach: 0.0,
                    rest_angle: -FRAC_PI_2,
                    length,
                    radius: 0.02,
                    mass,
                },
            ],
            joints: vec![JointSpec {
                name: "pivot".into(),
                kp: 0.0,
                kd: 0.0,
                torque_limit: 1e6,
                lower: -PI,
                upper: PI,
            }],
            gravity: [0.0, -9.81],
            control_dt: 1.0 / 30.0,
            substeps: 8,
            friction: 0.0,
            fixed_root: true,
            ground: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn humanoid_is_valid() {
        let s = CharacterSpec::humanoid();
        s.validate().unwrap();
        assert_eq!(s.num_joints(), 9);
        assert_eq!(s.num_dofs(), 12);
        assert_eq!(s.chain(3), vec![3, 2]);
    }

    #[test]
    fn json_round_trip() {
        let s = CharacterSpec::humanoid();
        assert_eq!(CharacterSpec::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn cyclic_or_forward_parent_is_rejected() {
        let mut s = CharacterSpec::humanoid();
        s.links[2].parent = Some(5);
        assert!(matches!(s.validate(), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&CharacterSpec::humanoid().to_json()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(CharacterSpec::from_json(&v.to_string()).is_err());
    }
}
