//! Two-character motion clips and their binary file format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! 0   magic  "RFMO"
//! 4   u32    version (1)
//! 8   f32    fps
//! 12  u32    J, joints per character
//! 16  u32    D, spatial dimension (2)
//! 20  u32    L, frames
//! 24  f32 × L × 2 × (6 + 2J)   per frame: actor state, then reactor state
//! ```
//!
//! Each state is `[x, y, θ, q.., vx, vy, ω, q̇..]`. Family labels live in the
//! corpus index, not in the clip file.

use std::path::Path;

use reaction_forge_sim::CharacterState;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

pub const MOTION_MAGIC: &[u8; 4] = b"RFMO";
pub const MOTION_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// One character's kinematic track.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub family: String,
    pub states: Vec<CharacterState>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.states.first().map(|s| s.q.len()).unwrap_or(0)
    }
}

/// Actor and reactor tracks of equal length and frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionPair {
    pub id: usize,
    pub actor: MotionSequence,
    pub reactor: MotionSequence,
}

impl InteractionPair {
    pub fn new(id: usize, actor: MotionSequence, reactor: MotionSequence) -> Result<Self> {
        if actor.len() != reactor.len() {
            return Err(ForgeError::Contract(format!(
                "actor has {} frames, reactor {}",
                actor.len(),
                reactor.len()
            )));
        }
        if actor.fps != reactor.fps {
            return Err(ForgeError::Contract("actor and reactor fps differ".into()));
        }
        Ok(Self { id, actor, reactor })
    }

    pub fn family(&self) -> &str {
        &self.actor.family
    }

    pub fn len(&self) -> usize {
        self.actor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actor.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.actor.fps
    }
}

pub fn encode_motion(pair: &InteractionPair) -> Vec<u8> {
    let j = pair.actor.joints().max(pair.reactor.joints());
    let width = CharacterState::flat_len(j);
    let mut out = Vec::with_capacity(HEADER_LEN + pair.len() * 2 * width * 4);
    out.extend_from_slice(MOTION_MAGIC);
    out.extend_from_slice(&MOTION_VERSION.to_le_bytes());
    out.extend_from_slice(&(pair.fps() as f32).to_le_bytes());
    out.extend_from_slice(&(j as u32).to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(pair.len() as u32).to_le_bytes());
    for (a, r) in pair.actor.states.iter().zip(&pair.reactor.states) {
        for v in a.to_vec().into_iter().chain(r.to_vec()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(ForgeError::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes a clip. Both tracks get an empty family label.
pub fn decode_motion(bytes: &[u8]) -> Result<InteractionPair> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MOTION_MAGIC {
        return Err(ForgeError::Format {
            offset: 0,
            message: "bad magic, expected RFMO".into(),
        });
    }
    let version = r.u32("version")?;
    if version != MOTION_VERSION {
        return Err(ForgeError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let fps = r.f32("fps")? as f64;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(ForgeError::Format {
            offset: 8,
            message: format!("fps must be positive, got {fps}"),
        });
    }
    let j = r.u32("joint count")? as usize;
    let d = r.u32("dimension")?;
    if d != 2 {
        return Err(ForgeError::Format {
            offset: 16,
            message: format!("only planar clips are supported, got D={d}"),
        });
    }
    let frames = r.u32("frame count")? as usize;
    let width = CharacterState::flat_len(j);
    let mut actor = Vec::with_capacity(frames);
    let mut reactor = Vec::with_capacity(frames);
    let mut buf = vec![0.0; width];
    for f in 0..frames {
        for track in [&mut actor, &mut reactor] {
            for v in buf.iter_mut() {
                *v = r.f32(&format!("frame {f}"))? as f64;
            }
            track.push(CharacterState::from_slice(&buf, j));
        }
    }
    if r.pos != bytes.len() {
        return Err(ForgeError::Format {
            offset: r.pos,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let seq = |states| MotionSequence {
        fps,
        family: String::new(),
        states,
    };
    InteractionPair::new(0, seq(actor), seq(reactor))
}

pub fn save_motion(path: impl AsRef<Path>, pair: &InteractionPair) -> Result<()> {
    std::fs::write(path, encode_motion(pair))?;
    Ok(())
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<InteractionPair> {
    decode_motion(&std::fs::read(path)?)
}

/// Rounds every value to the nearest `f32`, the precision of the file format.
pub fn quantize(state: &CharacterState) -> CharacterState {
    let v: Vec<f64> = state.to_vec().into_iter().map(|x| x as f32 as f64).collect();
    CharacterState::from_slice(&v, state.q.len())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    id: usize,
    family: String,
    file: String,
}

pub const CORPUS_INDEX: &str = "index.json";

/// Writes one clip per pair plus an `index.json` with ids and families.
pub fn save_corpus(dir: impl AsRef<Path>, pairs: &[InteractionPair]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut index = Vec::with_capacity(pairs.len());
    for p in pairs {
        let file = format!("pair_{:05}.rfmo", p.id);
        save_motion(dir.join(&file), p)?;
        index.push(IndexEntry {
            id: p.id,
            family: p.family().to_string(),
            file,
        });
    }
    std::fs::write(dir.join(CORPUS_INDEX), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<InteractionPair>> {
    let dir = dir.as_ref();
    let index: Vec<IndexEntry> = serde_json::from_str(&std::fs::read_to_string(dir.join(CORPUS_INDEX))?)?;
    index
        .into_iter()
        .map(|e| {
            let mut p = load_motion(dir.join(&e.file))?;
            p.id = e.id;
            p.actor.family = e.family.clone();
            p.reactor.family = e.family;
            Ok(p)
        })
        .collect()
}
