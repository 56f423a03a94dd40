//! SVG frame dumps of an interaction: both characters' capsules and the
//! ground line.

use std::fmt::Write as _;
use std::path::Path;

use reaction_forge_sim::{capsules, CharacterSpec, CharacterState};

use crate::error::Result;
use crate::motion::InteractionPair;

pub const ACTOR_COLOR: &str = "#3b6ea5";
pub const REACTOR_COLOR: &str = "#c8553d";
const MARGIN: f64 = 0.25;
const PIXELS_PER_METER: f64 = 200.0;

/// World-space rectangle shown by every frame of one motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl View {
    /// Bounds of all capsules over all frames plus a margin; the ground is
    /// always in view.
    pub fn fit(spec: &CharacterSpec, frames: &[(&CharacterState, &CharacterState)]) -> Self {
        let mut min = [f64::INFINITY, 0.0f64];
        let mut max = [f64::NEG_INFINITY, 0.0f64];
        for (a, r) in frames {
            for c in capsules(spec, a).iter().chain(&capsules(spec, r)) {
                for p in [c.a, c.b] {
                    for k in 0..2 {
                        min[k] = min[k].min(p[k] - c.radius);
                        max[k] = max[k].max(p[k] + c.radius);
                    }
                }
            }
        }
        if !min[0].is_finite() {
            min[0] = -1.0;
            max[0] = 1.0;
        }
        Self {
            min: [min[0] - MARGIN, min[1] - MARGIN],
            max: [max[0] + MARGIN, max[1] + MARGIN],
        }
    }
}

fn character(out: &mut String, spec: &CharacterSpec, s: &CharacterState, color: &str) {
    let _ = writeln!(out, r#"<g stroke="{color}" stroke-linecap="round" fill="none">"#);
    for c in capsules(spec, s) {
        let _ = writeln!(
            out,
            r#"<line x1="{:.4}" y1="{:.4}" x2="{:.4}" y2="{:.4}" stroke-width="{:.4}"/>"#,
            c.a[0],
            c.a[1],
            c.b[0],
            c.b[1],
            2.0 * c.radius
        );
    }
    let _ = writeln!(out, "</g>");
}

/// One frame. World y points up; the group transform flips it for SVG.
pub fn svg_frame(spec: &CharacterSpec, actor: &CharacterState, reactor: &CharacterState, view: &View) -> String {
    let w = view.max[0] - view.min[0];
    let h = view.max[1] - view.min[1];
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="{:.4} {:.4} {:.4} {:.4}">"#,
        w * PIXELS_PER_METER,
        h * PIXELS_PER_METER,
        view.min[0],
        -view.max[1],
        w,
        h
    );
    let _ = writeln!(out, r#"<rect x="{:.4}" y="{:.4}" width="{w:.4}" height="{h:.4}" fill="white"/>"#, view.min[0], -view.max[1]);
    let _ = writeln!(out, r#"<g transform="scale(1,-1)">"#);
    let _ = writeln!(
        out,
        r##"<line x1="{:.4}" y1="0" x2="{:.4}" y2="0" stroke="#444444" stroke-width="0.01"/>"##,
        view.min[0], view.max[0]
    );
    character(&mut out, spec, actor, ACTOR_COLOR);
    character(&mut out, spec, reactor, REACTOR_COLOR);
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, "</svg>");
    out
}

/// Writes `frame_00000.svg`, `frame_00001.svg`, ... into `dir` and returns
/// the number of frames.
pub fn render_frames(spec: &CharacterSpec, pair: &InteractionPair, dir: impl AsRef<Path>) -> Result<usize> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let frames: Vec<_> = pair.actor.states.iter().zip(&pair.reactor.states).collect();
    let view = View::fit(spec, &frames);
    for (t, (a, r)) in frames.iter().enumerate() {
        std::fs::write(dir.join(format!("frame_{t:05}.svg")), svg_frame(spec, a, r, &view))?;
    }
    Ok(frames.len())
}
