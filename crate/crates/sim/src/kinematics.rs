//! Planar forward kinematics and point Jacobians.
//!
//! Every material point of the body can be written as
//! `p = root + Σ c_m u(φ_m)` where `φ_m` is the absolute angle of link `m` on
//! the chain to the root and `u(φ) = (cos φ, sin φ)`. Differentiating that sum
//! gives the Jacobian columns and the velocity-product ("bias") acceleration.

use crate::spec::CharacterSpec;
use crate::state::CharacterState;

pub type Vec2 = [f64; 2];

#[inline]
pub fn unit(angle: f64) -> Vec2 {
    [angle.cos(), angle.sin()]
}

#[inline]
pub fn perp(v: Vec2) -> Vec2 {
    [-v[1], v[0]]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

/// Rotates `v` by `angle`.
#[inline]
pub fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFrame {
    /// Absolute axis angle.
    pub angle: f64,
    pub angular_velocity: f64,
    pub base: Vec2,
    pub tip: Vec2,
}

/// Posed body: per-link frames plus the chain structure needed for Jacobians.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub links: Vec<LinkFrame>,
    root_vel: Vec2,
    n_dofs: usize,
    root_dofs: usize,
}

/// Jacobian rows of a point: `v = J q̇`, plus `J̇ q̇`.
#[derive(Debug, Clone)]
pub struct PointJacobian {
    pub position: Vec2,
    pub velocity: Vec2,
    pub rows: [Vec<f64>; 2],
    pub bias: Vec2,
}

impl Kinematics {
    pub fn new(spec: &CharacterSpec, state: &CharacterState) -> Self {
        let n = spec.num_links();
        let mut links = Vec::with_capacity(n);
        let root_rate = if spec.fixed_root { 0.0 } else { state.root_ang_vel };
        for (i, l) in spec.links.iter().enumerate() {
            let (angle, rate, base) = match l.parent {
                None => (state.root_angle + l.rest_angle, root_rate, state.root_pos),
                Some(p) => {
                    let pf: &LinkFrame = &links[p];
                    (
                        pf.angle + l.rest_angle + state.q[i - 1],
                        pf.angular_velocity + state.qd[i - 1],
                        add(pf.base, scale(unit(pf.angle), l.attach)),
                    )
                }
            };
            links.push(LinkFrame {
                angle,
                angular_velocity: rate,
                base,
                tip: add(base, scale(unit(angle), l.length)),
            });
        }
        Self {
            links,
            root_vel: if spec.fixed_root { [0.0; 2] } else { state.root_vel },
            n_dofs: spec.num_dofs(),
            root_dofs: spec.root_dofs(),
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Point at distance `s` along the axis of `link`.
    pub fn point(&self, link: usize, s: f64) -> Vec2 {
        let f = &self.links[link];
        add(f.base, scale(unit(f.angle), s))
    }

    /// Angular-velocity Jacobian row of `link` (constant in the plane).
    pub fn angular_row(&self, spec: &CharacterSpec, link: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_dofs];
        if self.root_dofs == 3 {
            row[2] = 1.0;
        }
        for m in spec.chain(link) {
            row[self.root_dofs + m - 1] = 1.0;
        }
        row
    }

    /// Jacobian of the point at distance `s` along `link`.
    pub fn point_jacobian(&self, spec: &CharacterSpec, link: usize, s: f64) -> PointJacobian {
        let mut rows = [vec![0.0; self.n_dofs], vec![0.0; self.n_dofs]];
        let mut velocity = self.root_vel;
        let mut bias = [0.0; 2];
        if self.root_dofs == 3 {
            rows[0][0] = 1.0;
            rows[1][1] = 1.0;
        }
        let mut m = link;
        let mut c = s;
        loop {
            let f = &self.links[m];
            let u = unit(f.angle);
            let w = scale(perp(u), c);
            velocity = add(velocity, scale(w, f.angular_velocity));
            bias = add(bias, scale(u, -c * f.angular_velocity * f.angular_velocity));
            if self.root_dofs == 3 {
                rows[0][2] += w[0];
                rows[1][2] += w[1];
            }
            // every joint between the root and link m rotates link m
            let mut k = m;
            while let Some(p) = spec.links[k].parent {
                let col = self.root_dofs + k - 1;
                rows[0][col] += w[0];
                rows[1][col] += w[1];
                k = p;
            }
            match spec.links[m].parent {
                Some(p) => {
                    c = spec.links[m].attach;
                    m = p;
                }
                None => break,
            }
        }
        PointJacobian {
            position: self.point(link, s),
            velocity,
            rows,
            bias,
        }
    }
}

/// Root position followed by the distal end of every non-root link, with
/// matching analytic velocities. `J + 1` points.
pub fn keypoints(spec: &CharacterSpec, state: &CharacterState) -> (Vec<Vec2>, Vec<Vec2>) {
    let kin = Kinematics::new(spec, state);
    keypoints_from(spec, &kin)
}

pub fn keypoints_from(spec: &CharacterSpec, kin: &Kinematics) -> (Vec<Vec2>, Vec<Vec2>) {
    let n = spec.num_links();
    let mut pos = Vec::with_capacity(n);
    let mut vel = Vec::with_capacity(n);
    pos.push(kin.links[0].base);
    vel.push(kin.root_vel);
    for i in 1..n {
        let j = kin.point_jacobian(spec, i, spec.links[i].length);
        pos.push(j.position);
        vel.push(j.velocity);
    }
    (pos, vel)
}

/// Kinetic plus gravitational potential energy.
pub fn energy(spec: &CharacterSpec, state: &CharacterState) -> f64 {
    let kin = Kinematics::new(spec, state);
    let mut e = 0.0;
    for (i, l) in spec.links.iter().enumerate() {
        if spec.fixed_root && i == 0 {
            continue;
        }
        let j = kin.point_jacobian(spec, i, 0.5 * l.length);
        let w = kin.links[i].angular_velocity;
        e += 0.5 * l.mass * dot(j.velocity, j.velocity) + 0.5 * spec.link_inertia(i) * w * w;
        e -= l.mass * dot(spec.gravity, j.position);
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn single_link_tip_follows_planar_fk() {
        let mut spec = CharacterSpec::pendulum(1.0, 1.0);
        spec.links[1].rest_angle = 0.0;
        let mut s = CharacterState::rest(&spec, [0.0, 0.0]);
        s.q[0] = FRAC_PI_2;
        let (p, _) = keypoints(&spec, &s);
        assert!((p[1][0] - FRAC_PI_2.cos()).abs() < 1e-15);
        assert!((p[1][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_difference_of_position() {
        let spec = CharacterSpec::humanoid();
        let mut s = CharacterState::rest(&spec, [0.3, 1.0]);
        s.root_angle = 0.2;
        for (k, q) in s.q.iter_mut().enumerate() {
            *q = 0.1 * k as f64 - 0.3;
        }
        let kin = Kinematics::new(&spec, &s);
        let jac = kin.point_jacobian(&spec, 3, 0.3);
        let p0 = s.positions(&spec);
        let h = 1e-6;
        for d in 0..spec.num_dofs() {
            let mut up = p0.clone();
            up[d] += h;
            let mut dn = p0.clone();
            dn[d] -= h;
            let mut su = s.clone();
            su.set_positions(&spec, &up);
            let mut sd = s.clone();
            sd.set_positions(&spec, &dn);
            let pu = Kinematics::new(&spec, &su).point(3, 0.3);
            let pd = Kinematics::new(&spec, &sd).point(3, 0.3);
            for a in 0..2 {
                let fd = (pu[a] - pd[a]) / (2.0 * h);
                assert!((fd - jac.rows[a][d]).abs() < 1e-8, "dof {d} axis {a}");
            }
        }
    }
}
