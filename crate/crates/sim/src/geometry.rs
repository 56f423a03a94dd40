//! Capsule geometry: distances, overlap areas and inter-character penetration.

use crate::kinematics::{add, dot, norm, scale, sub, Kinematics, Vec2};
use crate::spec::CharacterSpec;
use crate::state::CharacterState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vec2,
    pub b: Vec2,
    pub radius: f64,
}

impl Capsule {
    pub fn circle(center: Vec2, radius: f64) -> Self {
        Self {
            a: center,
            b: center,
            radius,
        }
    }

    fn is_circle(&self) -> bool {
        norm(sub(self.b, self.a)) < 1e-12
    }

    /// Counter-clockwise stadium outline with `per_cap` points on each end.
    fn polygon(&self, per_cap: usize) -> Vec<Vec2> {
        let d = sub(self.b, self.a);
        let axis = d[1].atan2(d[0]);
        let mut pts = Vec::with_capacity(2 * per_cap);
        for (center, start) in [(self.b, axis - std::f64::consts::FRAC_PI_2), (self.a, axis + std::f64::consts::FRAC_PI_2)] {
            for k in 0..per_cap {
                let t = start + std::f64::consts::PI * k as f64 / (per_cap - 1) as f64;
                pts.push(add(center, scale([t.cos(), t.sin()], self.radius)));
            }
        }
        pts
    }
}

/// Capsules of every link of a posed character.
pub fn capsules(spec: &CharacterSpec, state: &CharacterState) -> Vec<Capsule> {
    capsules_from(spec, &Kinematics::new(spec, state))
}

pub fn capsules_from(spec: &CharacterSpec, kin: &Kinematics) -> Vec<Capsule> {
    spec.links
        .iter()
        .zip(&kin.links)
        .map(|(l, f)| Capsule {
            a: f.base,
            b: f.tip,
            radius: l.radius,
        })
        .collect()
}

/// Closest points between segments `p1q1` and `p2q2`: returns
/// `(s, t, c1, c2)` with `s, t ∈ [0, 1]` the segment parameters.
pub fn closest_points(p1: Vec2, q1: Vec2, p2: Vec2, q2: Vec2) -> (f64, f64, Vec2, Vec2) {
    let d1 = sub(q1, p1);
    let d2 = sub(q2, p2);
    let r = sub(p1, p2);
    let a = dot(d1, d1);
    let e = dot(d2, d2);
    let f = dot(d2, r);
    const EPS: f64 = 1e-14;
    let (s, t);
    if a <= EPS && e <= EPS {
        return (0.0, 0.0, p1, p2);
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(d1, r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(d1, d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (s, t, add(p1, scale(d1, s)), add(p2, scale(d2, t)))
}

/// Surface separation (negative when overlapping).
pub fn separation(x: &Capsule, y: &Capsule) -> f64 {
    let (_, _, c1, c2) = closest_points(x.a, x.b, y.a, y.b);
    norm(sub(c1, c2)) - x.radius - y.radius
}

/// Area of the intersection of two circles.
pub fn circle_lens_area(r1: f64, r2: f64, d: f64) -> f64 {
    if d >= r1 + r2 {
        return 0.0;
    }
    let rmin = r1.min(r2);
    if d <= (r1 - r2).abs() {
        return std::f64::consts::PI * rmin * rmin;
    }
    let a1 = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).clamp(-1.0, 1.0).acos();
    let a2 = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).clamp(-1.0, 1.0).acos();
    let k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
    r1 * r1 * a1 + r2 * r2 * a2 - 0.5 * k.max(0.0).sqrt()
}

const CAP_POINTS: usize = 48;

/// Overlap area of two capsules; exact for circles, polygonal otherwise.
pub fn overlap_area(x: &Capsule, y: &Capsule) -> f64 {
    if separation(x, y) >= 0.0 {
        return 0.0;
    }
    if x.is_circle() && y.is_circle() {
        return circle_lens_area(x.radius, y.radius, norm(sub(x.a, y.a)));
    }
    let subject = if x.is_circle() { circle_polygon(x) } else { x.polygon(CAP_POINTS) };
    let clip = if y.is_circle() { circle_polygon(y) } else { y.polygon(CAP_POINTS) };
    polygon_area(&clip_convex(&subject, &clip))
}

fn circle_polygon(c: &Capsule) -> Vec<Vec2> {
    let n = 2 * CAP_POINTS;
    (0..n)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            add(c.a, scale([t.cos(), t.sin()], c.radius))
        })
        .collect()
}

/// Sutherland–Hodgman clip of `subject` by the convex counter-clockwise `clip`.
fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = sub(b, a);
        let inside = |p: Vec2| edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= 0.0;
        let input = std::mem::take(&mut out);
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(cur), inside(prev));
            if ci != pi {
                let d = sub(cur, prev);
                let denom = edge[0] * d[1] - edge[1] * d[0];
                if denom.abs() > 1e-18 {
                    let t = (edge[0] * (a[1] - prev[1]) - edge[1] * (a[0] - prev[0])) / denom;
                    out.push(add(prev, scale(d, t)));
                }
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

fn polygon_area(p: &[Vec2]) -> f64 {
    if p.len() < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..p.len() {
        let (u, v) = (p[i], p[(i + 1) % p.len()]);
        a += u[0] * v[1] - v[0] * u[1];
    }
    0.5 * a.abs()
}

/// Aggregate capsule overlap between two characters: `(total overlap area,
/// deepest penetration)`. Both are zero when the bodies are separated.
pub fn penetration(spec: &CharacterSpec, a: &CharacterState, b: &CharacterState) -> (f64, f64) {
    penetration_between(&capsules(spec, a), &capsules(spec, b))
}

pub fn penetration_between(xs: &[Capsule], ys: &[Capsule]) -> (f64, f64) {
    let mut area = 0.0;
    let mut depth: f64 = 0.0;
    for x in xs {
        for y in ys {
            let sep = separation(x, y);
            if sep < 0.0 {
                depth = depth.max(-sep);
                area += overlap_area(x, y);
            }
        }
    }
    (area, depth)
}

/// Smallest surface separation between any pair of links of two characters.
pub fn min_separation(xs: &[Capsule], ys: &[Capsule]) -> f64 {
    let mut best = f64::INFINITY;
    for x in xs {
        for y in ys {
            best = best.min(separation(x, y));
        }
    }
    best
}
