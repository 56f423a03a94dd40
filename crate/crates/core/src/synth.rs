//! Scripted two-character interactions.
//!
//! Every clip puts the actor on the left facing +x and the reactor on the
//! right facing −x. Poses are written in a character-local frame (facing +x,
//! x measured from the character's starting root) and mirrored for the
//! reactor. Feet stay planted; legs are solved with two-link IK so each
//! frame is a plausible double-support pose.

use std::f64::consts::{PI, TAU};

use rand::Rng as _;
use reaction_forge_nn::{stream, Rng};
use reaction_forge_sim::{CharacterSpec, CharacterState};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::motion::{quantize, InteractionPair, MotionSequence};

pub const APPROACH_AND_HANDSHAKE: &str = "approach-and-handshake";
pub const PUSH_AND_RECOIL: &str = "push-and-recoil";
pub const MIRROR_FOLLOW: &str = "mirror-follow";
pub const CIRCLE_AROUND: &str = "circle-around";
pub const FAMILIES: [&str; 4] = [APPROACH_AND_HANDSHAKE, PUSH_AND_RECOIL, MIRROR_FOLLOW, CIRCLE_AROUND];

pub const NECK: usize = 0;
pub const SHOULDER_L: usize = 1;
pub const ELBOW_L: usize = 2;
pub const SHOULDER_R: usize = 3;
pub const ELBOW_R: usize = 4;
pub const HIP_L: usize = 5;
pub const KNEE_L: usize = 6;
pub const HIP_R: usize = 7;
pub const KNEE_R: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyWeight {
    pub name: String,
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub pairs: usize,
    pub families: Vec<FamilyWeight>,
    pub min_len: usize,
    pub max_len: usize,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pairs: 250,
            families: FAMILIES
                .iter()
                .map(|f| FamilyWeight {
                    name: (*f).to_string(),
                    weight: 1,
                })
                .collect(),
            min_len: 60,
            max_len: 150,
            fps: 30.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.len() < 2 {
            return Err(ForgeError::Config("at least two interaction families are required".into()));
        }
        for f in &self.families {
            if !FAMILIES.contains(&f.name.as_str()) {
                return Err(ForgeError::Config(format!("unknown interaction family `{}`", f.name)));
            }
            if f.weight == 0 {
                return Err(ForgeError::Config(format!("family `{}` has zero weight", f.name)));
            }
        }
        let mut names: Vec<&str> = self.families.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.families.len() {
            return Err(ForgeError::Config("duplicate interaction family".into()));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(ForgeError::Config(format!(
                "clip lengths must satisfy 2 ≤ min ≤ max, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if !(self.fps > 0.0) {
            return Err(ForgeError::Config("fps must be positive".into()));
        }
        Ok(())
    }

    /// Pairs per family, proportional to the weights (largest remainder,
    /// ties broken by family name).
    pub fn family_counts(&self) -> Vec<(String, usize)> {
        let total: u64 = self.families.iter().map(|f| f.weight as u64).sum();
        let n = self.pairs as u64;
        let mut rows: Vec<(String, usize, u64)> = self
            .families
            .iter()
            .map(|f| {
                let exact = n * f.weight as u64;
                (f.name.clone(), (exact / total) as usize, exact % total)
            })
            .collect();
        let assigned: usize = rows.iter().map(|r| r.1).sum();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[b].2.cmp(&rows[a].2).then_with(|| rows[a].0.cmp(&rows[b].0)));
        for &k in order.iter().take(self.pairs - assigned) {
            rows[k].1 += 1;
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows.into_iter().map(|(name, c, _)| (name, c)).collect()
    }
}

/// Generates the corpus. Pair `k` of a family depends only on
/// `(seed, family, k)`; output is ordered by family name, then `k`.
pub fn synth_interactions(spec: &CharacterSpec, config: &SynthConfig, seed: u64) -> Result<Vec<InteractionPair>> {
    config.validate()?;
    if spec.num_joints() != 9 {
        return Err(ForgeError::Config("the interaction scripts target the 9-joint humanoid".into()));
    }
    let mut out = Vec::with_capacity(config.pairs);
    for (family, count) in config.family_counts() {
        for k in 0..count {
            let mut rng = stream(seed, &format!("synth/{family}/{k}"));
            let (actor, reactor) = script_pair(spec, &family, config, &mut rng);
            let track = |states| MotionSequence {
                fps: config.fps,
                family: family.clone(),
                states,
            };
            out.push(InteractionPair::new(out.len(), track(actor), track(reactor))?);
        }
    }
    Ok(out)
}

/// Character-local pose, facing +x.
#[derive(Debug, Clone, Copy)]
struct LocalPose {
    root_x: f64,
    root_y: f64,
    tilt: f64,
    neck: f64,
    arms: [f64; 4],
    feet: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
struct Style {
    stance: f64,
    height: f64,
    arms: [f64; 4],
    neck: f64,
}

struct Body {
    thigh: f64,
    shin: f64,
    foot_radius: f64,
}

impl Body {
    fn of(spec: &CharacterSpec) -> Self {
        Self {
            thigh: spec.links[6].length,
            shin: spec.links[7].length,
            foot_radius: spec.links[7].radius,
        }
    }

    fn reach(&self) -> f64 {
        0.97 * (self.thigh + self.shin)
    }

    /// Hip and knee angles placing the shin tip on the ground at `foot_x`.
    fn leg(&self, hip: [f64; 2], tilt: f64, foot_x: f64) -> (f64, f64) {
        let d = [foot_x - hip[0], self.foot_radius - hip[1]];
        let dist = (d[0] * d[0] + d[1] * d[1]).sqrt().min(0.999 * (self.thigh + self.shin));
        let (l1, l2) = (self.thigh, self.shin);
        let cos_k = ((dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let knee = -cos_k.acos();
        let thigh = d[1].atan2(d[0]) - (l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
        (wrap(thigh - tilt - 1.5 * PI), knee)
    }
}

fn wrap(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(TAU) - PI;
    if x <= -PI {
        x += TAU;
    }
    x
}

fn style(body: &Body, rng: &mut Rng) -> Style {
    let stance = rng.random_range(0.15..0.24);
    let crouch = rng.random_range(0.0..0.05);
    Style {
        stance,
        height: (body.reach() * body.reach() - stance * stance).sqrt() + body.foot_radius - crouch,
        arms: [
            rng.random_range(-0.25..0.25),
            rng.random_range(0.15..0.5),
            rng.random_range(-0.25..0.25),
            rng.random_range(0.15..0.5),
        ],
        neck: rng.random_range(-0.1..0.1),
    }
}

fn rest(style: &Style) -> LocalPose {
    LocalPose {
        root_x: 0.0,
        root_y: style.height,
        tilt: 0.0,
        neck: style.neck,
        arms: style.arms,
        feet: [style.stance, -style.stance],
    }
}

/// `sin²` window that is zero outside `[a, b]` and peaks at the midpoint.
fn bump(s: f64, a: f64, b: f64) -> f64 {
    if s <= a || s >= b {
        0.0
    } else {
        (PI * (s - a) / (b - a)).sin().powi(2)
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Positions of a pose placed at `origin_x` facing `facing` (±1).
fn place(spec: &CharacterSpec, body: &Body, p: &LocalPose, origin_x: f64, facing: f64) -> CharacterState {
    let mut s = CharacterState::rest(spec, [0.0, 0.0]);
    let hip = [p.root_x, p.root_y];
    let (hl, kl) = body.leg(hip, p.tilt, p.feet[0]);
    let (hr, kr) = body.leg(hip, p.tilt, p.feet[1]);
    let local = [p.neck, p.arms[0], p.arms[1], p.arms[2], p.arms[3], hl, kl, hr, kr];
    s.root_pos = [origin_x + facing * p.root_x, p.root_y];
    s.root_angle = facing * p.tilt;
    for (q, v) in s.q.iter_mut().zip(local) {
        *q = facing * v;
    }
    s
}

/// Central-difference velocities (one-sided at the ends).
pub fn finite_difference_velocities(states: &mut [CharacterState], fps: f64) {
    let n = states.len();
    if n < 2 {
        return;
    }
    let pos: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            let mut v = vec![s.root_pos[0], s.root_pos[1], s.root_angle];
            v.extend_from_slice(&s.q);
            v
        })
        .collect();
    for t in 0..n {
        let (a, b, span) = if t == 0 {
            (0, 1, 1.0)
        } else if t == n - 1 {
            (n - 2, n - 1, 1.0)
        } else {
            (t - 1, t + 1, 2.0)
        };
        let d: Vec<f64> = pos[b].iter().zip(&pos[a]).map(|(x, y)| (x - y) * fps / span).collect();
        let s = &mut states[t];
        s.root_vel = [d[0], d[1]];
        s.root_ang_vel = d[2];
        s.qd.copy_from_slice(&d[3..]);
    }
}

fn script_pair(
    spec: &CharacterSpec,
    family: &str,
    config: &SynthConfig,
    rng: &mut Rng,
) -> (Vec<CharacterState>, Vec<CharacterState>) {
    let body = Body::of(spec);
    let len = rng.random_range(config.min_len..=config.max_len);
    let gap = rng.random_range(1.45..1.7);
    let (sa, sr) = (style(&body, rng), style(&body, rng));
    let fps = config.fps;
    let poses: Vec<(LocalPose, LocalPose)> = match family {
        APPROACH_AND_HANDSHAKE => {
            let s0 = rng.random_range(0.05..0.25);
            let s1 = s0 + rng.random_range(0.55..0.75);
            let lean = rng.random_range(0.03..0.1);
            let shift = rng.random_range(0.2..0.45);
            let reach = rng.random_range(1.15..1.45);
            let lag = rng.random_range(3..9) as f64 / (len - 1) as f64;
            let gain = rng.random_range(0.7..1.0);
            let pose = |st: &Style, e: f64| {
                let mut p = rest(st);
                p.root_x = shift * st.stance * e;
                p.tilt = -lean * e;
                p.arms[2] = lerp(st.arms[2], reach, e);
                p.arms[3] = lerp(st.arms[3], 0.15, e);
                p
            };
            (0..len)
                .map(|t| {
                    let s = t as f64 / (len - 1) as f64;
                    (pose(&sa, bump(s, s0, s1)), pose(&sr, gain * bump(s - lag, s0, s1)))
                })
                .collect()
        }
        PUSH_AND_RECOIL => {
            let s0 = rng.random_range(0.1..0.3);
            let s1 = s0 + rng.random_range(0.3..0.45);
            let shift = rng.random_range(0.25..0.5);
            let lag = rng.random_range(4..10) as f64 / (len - 1) as f64;
            let recoil = rng.random_range(0.4..0.7);
            let back = rng.random_range(0.12..0.25);
            let actor = |e: f64| {
                let mut p = rest(&sa);
                p.root_x = shift * sa.stance * e;
                p.tilt = -0.08 * e;
                for k in [0, 2] {
                    p.arms[k] = lerp(sa.arms[k], 1.45, e);
                    p.arms[k + 1] = lerp(sa.arms[k + 1], 0.05, e);
                }
                p
            };
            let reactor = |e: f64| {
                let mut p = rest(&sr);
                p.root_x = -recoil * sr.stance * e;
                p.root_y -= 0.04 * e;
                p.tilt = back * e;
                p.neck = lerp(sr.neck, 0.2, e);
                for k in [0, 2] {
                    p.arms[k] = lerp(sr.arms[k], 0.9, e);
                    p.arms[k + 1] = lerp(sr.arms[k + 1], 1.0, e);
                }
                p
            };
            (0..len)
                .map(|t| {
                    let s = t as f64 / (len - 1) as f64;
                    (actor(bump(s, s0, s1)), reactor(bump(s - lag, s0, s1 + 0.1)))
                })
                .collect()
        }
        MIRROR_FOLLOW => {
            let freq = [rng.random_range(0.25..0.7), rng.random_range(0.25..0.7), rng.random_range(0.15..0.4)];
            let amp = [rng.random_range(0.4..1.2), rng.random_range(0.4..1.2), rng.random_range(0.02..0.07)];
            let phase = [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)];
            (0..len)
                .map(|t| {
                    let time = t as f64 / fps;
                    let w = |k: usize| (TAU * freq[k] * time + phase[k]).sin();
                    let mut p = rest(&sa);
                    p.arms[0] = sa.arms[0] + amp[0] * w(0);
                    p.arms[1] = sa.arms[1] + 0.3 * amp[0] * (1.0 + w(0));
                    p.arms[2] = sa.arms[2] + amp[1] * w(1);
                    p.arms[3] = sa.arms[3] + 0.3 * amp[1] * (1.0 + w(1));
                    p.root_y -= amp[2] * (1.0 + w(2));
                    p.tilt = -0.06 * w(2);
                    (p, p)
                })
                .collect()
        }
        CIRCLE_AROUND => {
            let freq = rng.random_range(0.3..0.7);
            let radius = rng.random_range(0.25..0.45);
            let dip = rng.random_range(0.02..0.05);
            let phase = rng.random_range(0.0..TAU);
            let gain = rng.random_range(0.6..1.0);
            let pose = |st: &Style, angle: f64, g: f64| {
                let mut p = rest(st);
                p.root_x = g * radius * st.stance * (angle.cos() - phase.cos());
                p.root_y -= g * dip * (1.0 + angle.sin());
                p.tilt = -0.08 * g * angle.sin();
                p.arms[0] = st.arms[0] - 0.5 * g * angle.cos();
                p.arms[2] = st.arms[2] + 0.5 * g * angle.cos();
                p
            };
            (0..len)
                .map(|t| {
                    let a = TAU * freq * t as f64 / fps + phase;
                    // the reactor leads a quarter turn behind, mirroring the sway
                    (pose(&sa, a, 1.0), pose(&sr, a - 0.5 * PI, gain))
                })
                .collect()
        }
        other => unreachable!("family `{other}` passed validation"),
    };
    let mut actor: Vec<CharacterState> = poses.iter().map(|(a, _)| place(spec, &body, a, -0.5 * gap, 1.0)).collect();
    let mut reactor: Vec<CharacterState> = poses.iter().map(|(_, r)| place(spec, &body, r, 0.5 * gap, -1.0)).collect();
    finite_difference_velocities(&mut actor, fps);
    finite_difference_velocities(&mut reactor, fps);
    (
        actor.iter().map(quantize).collect(),
        reactor.iter().map(quantize).collect(),
    )
}
