//! Reduced-coordinate dynamics with semi-implicit Euler integration.
//!
//! Each control step runs `spec.substeps` inner steps of length `h`:
//!
//! 1. assemble the joint-space mass matrix `M` and generalized forces
//!    (gravity, velocity-product terms, joint torques);
//! 2. solve `(M + h D) q̇' = M q̇ + h f` where `D` holds the derivative gains of
//!    unsaturated PD joints (damping is taken at the end-of-step velocity);
//! 3. resolve contacts at velocity level with projected Gauss-Seidel:
//!    non-penetration along the normal, Coulomb friction on the ground;
//! 4. advance positions with the new velocities;
//! 5. project residual penetration out at position level.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::SimError;
use crate::geometry::{closest_points, Capsule};
use crate::kinematics::{norm, sub, Kinematics};
use crate::spec::CharacterSpec;
use crate::state::{Action, CharacterState};

/// A point counts as touching the ground below this height (m).
pub const CONTACT_SLOP: f64 = 1e-4;
/// Velocity constraints against obstacles activate below this separation (m).
pub const OBSTACLE_MARGIN: f64 = 2e-3;
/// Position projection keeps this much clearance from obstacles (m).
pub const OBSTACLE_SKIN: f64 = 1e-4;
const VELOCITY_ITERS: usize = 20;
const POSITION_ITERS: usize = 6;
const POSITION_SWEEPS: usize = 4;

/// Torque law `τ = k_p ∘ (a − q) − k_d ∘ q̇`, clamped to the torque limits.
pub fn pd_torque(spec: &CharacterSpec, state: &CharacterState, action: &Action) -> Vec<f64> {
    spec.joints
        .iter()
        .enumerate()
        .map(|(j, js)| {
            let tau = js.kp * (action.0[j] - state.q[j]) - js.kd * state.qd[j];
            tau.clamp(-js.torque_limit, js.torque_limit)
        })
        .collect()
}

/// How joints are driven during a step.
#[derive(Debug, Clone, Copy)]
pub enum Control<'a> {
    /// Constant joint torques for the whole step.
    Torques(&'a [f64]),
    /// PD targets; torques are recomputed every substep.
    Pd(&'a Action),
}

/// Contact summary for the state after a step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactReport {
    /// Per-link depth below the ground (m, ≥ 0).
    pub ground_depth: Vec<f64>,
    /// Per-link accumulated normal impulse from the ground (N·s).
    pub ground_impulse: Vec<f64>,
    /// Per-link flag: some end of the link is within [`CONTACT_SLOP`] of the ground.
    pub in_contact: Vec<bool>,
    /// Total normal impulse exchanged with obstacles (N·s).
    pub obstacle_impulse: f64,
}

impl ContactReport {
    pub fn max_ground_depth(&self) -> f64 {
        self.ground_depth.iter().copied().fold(0.0, f64::max)
    }
}

struct Constraint {
    link: usize,
    normal: DVector<f64>,
    tangent: Option<DVector<f64>>,
    depth: f64,
    ground: bool,
}

/// Steps one character. Holds a running step counter for diagnostics.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: CharacterSpec,
    steps: u64,
}

impl Simulator {
    pub fn new(spec: CharacterSpec) -> Result<Self, SimError> {
        spec.validate()?;
        Ok(Self { spec, steps: 0 })
    }

    pub fn spec(&self) -> &CharacterSpec {
        &self.spec
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// One control step with constant torques.
    pub fn step(&mut self, state: &CharacterState, torques: &[f64]) -> Result<(CharacterState, ContactReport), SimError> {
        if torques.len() != self.spec.num_joints() {
            return Err(SimError::Shape {
                expected: self.spec.num_joints(),
                got: torques.len(),
            });
        }
        self.advance(state, Control::Torques(torques), &[])
    }

    /// One control step tracking PD targets, with kinematic obstacles.
    pub fn step_pd(
        &mut self,
        state: &CharacterState,
        action: &Action,
        obstacles: &[Capsule],
    ) -> Result<(CharacterState, ContactReport), SimError> {
        if action.0.len() != self.spec.num_joints() {
            return Err(SimError::Shape {
                expected: self.spec.num_joints(),
                got: action.0.len(),
            });
        }
        let clamped = action.clamped(&self.spec);
        self.advance(state, Control::Pd(&clamped), obstacles)
    }

    pub fn advance(
        &mut self,
        state: &CharacterState,
        control: Control<'_>,
        obstacles: &[Capsule],
    ) -> Result<(CharacterState, ContactReport), SimError> {
        let links = self.spec.num_links();
        let mut report = ContactReport {
            ground_depth: vec![0.0; links],
            ground_impulse: vec![0.0; links],
            in_contact: vec![false; links],
            obstacle_impulse: 0.0,
        };
        let mut s = state.clone();
        let step = self.steps;
        self.steps += 1;
        for _ in 0..self.spec.substeps {
            self.substep(&mut s, control, obstacles, &mut report)
                .ok_or(SimError::Blowup { step })?;
            if !s.is_finite() {
                return Err(SimError::Blowup { step });
            }
        }
        let kin = Kinematics::new(&self.spec, &s);
        if self.spec.ground {
            for c in self.ground_points(&kin) {
                let (link, height) = (c.0, c.2);
                report.ground_depth[link] = report.ground_depth[link].max(-height);
                report.in_contact[link] |= height < CONTACT_SLOP;
            }
        }
        Ok((s, report))
    }

    /// `(link, distance along link, height above ground)` for both capsule ends.
    fn ground_points(&self, kin: &Kinematics) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::with_capacity(2 * self.spec.num_links());
        for (i, l) in self.spec.links.iter().enumerate() {
            if self.spec.fixed_root && i == 0 {
                continue;
            }
            let f = &kin.links[i];
            out.push((i, 0.0, f.base[1] - l.radius));
            out.push((i, l.length, f.tip[1] - l.radius));
        }
        out
    }

    fn constraints(&self, kin: &Kinematics, obstacles: &[Capsule], velocity_level: bool) -> Vec<Constraint> {
        let spec = &self.spec;
        let mut out = Vec::new();
        if spec.ground {
            for (link, s, height) in self.ground_points(kin) {
                let active = if velocity_level { height < CONTACT_SLOP } else { height < 0.0 };
                if !active {
                    continue;
                }
                let jac = kin.point_jacobian(spec, link, s);
                let normal = DVector::from_vec(jac.rows[1].clone());
                let tangent = velocity_level.then(|| {
                    let w = kin.angular_row(spec, link);
                    let r = spec.links[link].radius;
                    DVector::from_iterator(w.len(), jac.rows[0].iter().zip(&w).map(|(a, b)| a + r * b))
                });
                out.push(Constraint {
                    link,
                    normal,
                    tangent,
                    depth: (-height).max(0.0),
                    ground: true,
                });
            }
        }
        for (i, l) in spec.links.iter().enumerate() {
            if spec.fixed_root && i == 0 {
                continue;
            }
            let f = &kin.links[i];
            for o in obstacles {
                let (s, _, c1, c2) = closest_points(f.base, f.tip, o.a, o.b);
                let d = sub(c1, c2);
                let dist = norm(d);
                let sep = dist - l.radius - o.radius;
                let active = if velocity_level { sep < OBSTACLE_MARGIN } else { sep < OBSTACLE_SKIN };
                if !active {
                    continue;
                }
                let n = if dist > 1e-9 {
                    [d[0] / dist, d[1] / dist]
                } else {
                    let mid_self = [(f.base[0] + f.tip[0]) * 0.5, (f.base[1] + f.tip[1]) * 0.5];
                    let mid_obs = [(o.a[0] + o.b[0]) * 0.5, (o.a[1] + o.b[1]) * 0.5];
                    let dd = sub(mid_self, mid_obs);
                    let nn = norm(dd);
                    if nn > 1e-9 { [dd[0] / nn, dd[1] / nn] } else { [0.0, 1.0] }
                };
                let jac = kin.point_jacobian(spec, i, s * l.length);
                let normal = DVector::from_iterator(
                    jac.rows[0].len(),
                    jac.rows[0].iter().zip(&jac.rows[1]).map(|(a, b)| n[0] * a + n[1] * b),
                );
                out.push(Constraint {
                    link: i,
                    normal,
                    tangent: None,
                    depth: (OBSTACLE_SKIN - sep).max(0.0),
                    ground: false,
                });
            }
        }
        out
    }

    fn substep(
        &self,
        state: &mut CharacterState,
        control: Control<'_>,
        obstacles: &[Capsule],
        report: &mut ContactReport,
    ) -> Option<()> {
        let spec = &self.spec;
        let h = spec.substep_dt();
        let n = spec.num_dofs();
        let o = spec.root_dofs();
        let kin = Kinematics::new(spec, state);

        let mut mass = DMatrix::<f64>::zeros(n, n);
        let mut force = DVector::<f64>::zeros(n);
        for (i, l) in spec.links.iter().enumerate() {
            if spec.fixed_root && i == 0 {
                continue;
            }
            let jc = kin.point_jacobian(spec, i, 0.5 * l.length);
            let jw = kin.angular_row(spec, i);
            let inertia = spec.link_inertia(i);
            let acc = [spec.gravity[0] - jc.bias[0], spec.gravity[1] - jc.bias[1]];
            let (rx, ry) = (&jc.rows[0], &jc.rows[1]);
            for a in 0..n {
                force[a] += l.mass * (rx[a] * acc[0] + ry[a] * acc[1]);
                if rx[a] == 0.0 && ry[a] == 0.0 && jw[a] == 0.0 {
                    continue;
                }
                for b in 0..n {
                    mass[(a, b)] += l.mass * (rx[a] * rx[b] + ry[a] * ry[b]) + inertia * jw[a] * jw[b];
                }
            }
        }

        let mut system = mass.clone();
        match control {
            Control::Torques(t) => {
                for (j, tau) in t.iter().enumerate() {
                    force[o + j] += tau;
                }
            }
            Control::Pd(action) => {
                for (j, js) in spec.joints.iter().enumerate() {
                    let spring = js.kp * (action.0[j] - state.q[j]);
                    let tau = spring - js.kd * state.qd[j];
                    if tau.abs() > js.torque_limit {
                        force[o + j] += tau.clamp(-js.torque_limit, js.torque_limit);
                    } else {
                        force[o + j] += spring;
                        system[(o + j, o + j)] += h * js.kd;
                    }
                }
            }
        }

        let qd = DVector::from_vec(state.velocities(spec));
        let rhs = &mass * &qd + &force * h;
        let chol = Cholesky::new(system)?;
        let mut v = chol.solve(&rhs);

        let contacts = self.constraints(&kin, obstacles, true);
        if !contacts.is_empty() {
            solve_velocity(&chol, &mut v, &contacts, spec.friction, report);
        }

        let mut p = DVector::from_vec(state.positions(spec));
        p += &v * h;
        state.set_positions(spec, p.as_slice());
        state.set_velocities(spec, v.as_slice());

        self.project(state, &chol, obstacles);
        Some(())
    }

    fn project(&self, state: &mut CharacterState, chol: &Cholesky<f64, Dyn>, obstacles: &[Capsule]) {
        let spec = &self.spec;
        for _ in 0..POSITION_ITERS {
            let kin = Kinematics::new(spec, state);
            let cons = self.constraints(&kin, obstacles, false);
            if cons.is_empty() {
                break;
            }
            let dirs: Vec<DVector<f64>> = cons.iter().map(|c| chol.solve(&c.normal)).collect();
            let eff: Vec<f64> = cons.iter().zip(&dirs).map(|(c, w)| c.normal.dot(w)).collect();
            let mut lambda = vec![0.0; cons.len()];
            let mut delta = DVector::<f64>::zeros(spec.num_dofs());
            for _ in 0..POSITION_SWEEPS {
                for (k, c) in cons.iter().enumerate() {
                    if eff[k] <= 1e-12 {
                        continue;
                    }
                    let resid = c.depth - c.normal.dot(&delta);
                    let next = (lambda[k] + resid / eff[k]).max(0.0);
                    delta.axpy(next - lambda[k], &dirs[k], 1.0);
                    lambda[k] = next;
                }
            }
            let mut p = DVector::from_vec(state.positions(spec));
            p += delta;
            state.set_positions(spec, p.as_slice());
        }
        if spec.fixed_root {
            return;
        }
        // Whatever the iterations left behind is removed rigidly, ground last.
        let kin = Kinematics::new(spec, state);
        let residual = self
            .constraints(&kin, obstacles, false)
            .into_iter()
            .filter(|c| !c.ground)
            .count();
        if residual > 0 {
            self.push_out_of_obstacles(state, obstacles);
        }
        if spec.ground {
            let kin = Kinematics::new(spec, state);
            let lift = self
                .ground_points(&kin)
                .iter()
                .map(|c| -c.2)
                .fold(0.0, f64::max);
            if lift > 0.0 {
                state.root_pos[1] += lift;
            }
        }
    }

    fn push_out_of_obstacles(&self, state: &mut CharacterState, obstacles: &[Capsule]) {
        let spec = &self.spec;
        for _ in 0..4 {
            let kin = Kinematics::new(spec, state);
            let mut worst: Option<([f64; 2], f64)> = None;
            for (i, l) in spec.links.iter().enumerate() {
                let f = &kin.links[i];
                for o in obstacles {
                    let (_, _, c1, c2) = closest_points(f.base, f.tip, o.a, o.b);
                    let d = sub(c1, c2);
                    let dist = norm(d);
                    let need = OBSTACLE_SKIN - (dist - l.radius - o.radius);
                    if need > 0.0 && worst.is_none_or(|w| need > w.1) {
                        let n = if dist > 1e-9 { [d[0] / dist, d[1] / dist] } else { [0.0, 1.0] };
                        worst = Some((n, need));
                    }
                }
            }
            match worst {
                Some((n, need)) => {
                    // horizontal push only, so the ground stays resolved
                    let sx = if n[0] >= 0.0 { 1.0 } else { -1.0 };
                    state.root_pos[0] += sx * need / n[0].abs().max(0.2);
                }
                None => break,
            }
        }
    }
}

fn solve_velocity(
    chol: &Cholesky<f64, Dyn>,
    v: &mut DVector<f64>,
    contacts: &[Constraint],
    friction: f64,
    report: &mut ContactReport,
) {
    let wn: Vec<DVector<f64>> = contacts.iter().map(|c| chol.solve(&c.normal)).collect();
    let en: Vec<f64> = contacts.iter().zip(&wn).map(|(c, w)| c.normal.dot(w)).collect();
    let wt: Vec<Option<DVector<f64>>> = contacts
        .iter()
        .map(|c| c.tangent.as_ref().map(|t| chol.solve(t)))
        .collect();
    let et: Vec<f64> = contacts
        .iter()
        .zip(&wt)
        .map(|(c, w)| match (&c.tangent, w) {
            (Some(t), Some(w)) => t.dot(w),
            _ => 0.0,
        })
        .collect();
    let mut ln = vec![0.0; contacts.len()];
    let mut lt = vec![0.0; contacts.len()];
    for _ in 0..VELOCITY_ITERS {
        for (k, c) in contacts.iter().enumerate() {
            if en[k] > 1e-12 {
                let vn = c.normal.dot(v);
                let next = (ln[k] - vn / en[k]).max(0.0);
                v.axpy(next - ln[k], &wn[k], 1.0);
                ln[k] = next;
            }
            if let (Some(t), Some(w)) = (&c.tangent, &wt[k]) {
                if et[k] > 1e-12 {
                    let vt = t.dot(v);
                    let bound = friction * ln[k];
                    let next = (lt[k] - vt / et[k]).clamp(-bound, bound);
                    v.axpy(next - lt[k], w, 1.0);
                    lt[k] = next;
                }
            }
        }
    }
    for (k, c) in contacts.iter().enumerate() {
        if c.ground {
            report.ground_impulse[c.link] += ln[k];
        } else {
            report.obstacle_impulse += ln[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_target_equilibrium_gives_zero_torque() {
        let spec = CharacterSpec::humanoid();
        let mut s = CharacterState::rest(&spec, [0.0, 1.0]);
        s.q = (0..9).map(|k| 0.1 * k as f64).collect();
        let tau = pd_torque(&spec, &s, &Action(s.q.clone()));
        assert!(tau.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn hand_evaluated_scalar_torque() {
        let mut spec = CharacterSpec::pendulum(1.0, 1.0);
        spec.joints[0].kp = 10.0;
        spec.joints[0].kd = 1.0;
        let mut s = CharacterState::rest(&spec, [0.0, 0.0]);
        s.q[0] = 0.1;
        s.qd[0] = 0.5;
        let tau = pd_torque(&spec, &s, &Action(vec![0.3]));
        assert!((tau[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_gains_give_zero_torque() {
        let mut spec = CharacterSpec::humanoid();
        for j in &mut spec.joints {
            j.kp = 0.0;
            j.kd = 0.0;
        }
        let mut s = CharacterState::rest(&spec, [0.0, 1.0]);
        s.qd = vec![3.0; 9];
        let tau = pd_torque(&spec, &s, &Action(vec![1.0; 9]));
        assert!(tau.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn torque_is_clamped() {
        let spec = CharacterSpec::humanoid();
        let s = CharacterState::rest(&spec, [0.0, 1.0]);
        let tau = pd_torque(&spec, &s, &Action(vec![2.5; 9]));
        assert!(tau.iter().all(|t| *t <= 200.0));
        assert_eq!(tau[5], 200.0);
    }
}
