//! Named-tensor container shared by every trainable component.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! ```text
//! "RFCK"            4 bytes magic
//! version           u32 (currently 1)
//! tensor count      u32
//! per tensor:
//!   name length     u32
//!   name            UTF-8 bytes
//!   rank            u32
//!   dims            u32 × rank
//!   payload         f64 × product(dims), row-major
//! ```

use std::path::Path;

use crate::error::{NnError, Result};
use crate::tape::Matrix;

pub const MAGIC: &[u8; 4] = b"RFCK";
pub const VERSION: u32 = 1;
const FINGERPRINT: &str = "meta.fingerprint";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, dims: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.tensors.retain(|t| t.name != name);
        self.tensors.push(Tensor {
            name: name.to_string(),
            dims,
            data,
        });
    }

    pub fn push_matrix(&mut self, name: &str, m: &Matrix) {
        self.push(name, vec![m.nrows(), m.ncols()], m.iter().copied().collect());
    }

    pub fn push_vector(&mut self, name: &str, v: &[f64]) {
        self.push(name, vec![v.len()], v.to_vec());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        self.get(name)
            .map(|t| t.data.clone())
            .ok_or_else(|| NnError::MissingTensor(name.to_string()))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let t = self
            .get(name)
            .ok_or_else(|| NnError::MissingTensor(name.to_string()))?;
        let (r, c) = match t.dims.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => return Err(NnError::Contract(format!("`{name}` is not rank 1 or 2"))),
        };
        Matrix::from_shape_vec((r, c), t.data.clone())
            .map_err(|e| NnError::Contract(format!("`{name}`: {e}")))
    }

    /// Stores a 64-bit configuration fingerprint as two exact 32-bit halves.
    pub fn set_fingerprint(&mut self, fp: u64) {
        self.push_vector(FINGERPRINT, &[(fp >> 32) as f64, (fp & 0xffff_ffff) as f64]);
    }

    pub fn fingerprint(&self) -> Option<u64> {
        let t = self.get(FINGERPRINT)?;
        match t.data.as_slice() {
            [hi, lo] => Some(((*hi as u64) << 32) | (*lo as u64)),
            _ => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(NnError::Format {
                offset: 0,
                message: format!("bad magic {magic:?}"),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| NnError::Format {
                    offset: at,
                    message: format!("tensor name is not UTF-8: {e}"),
                })?
                .to_string();
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let n: usize = dims.iter().product();
            let at = r.pos;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| NnError::Format {
                offset: at,
                message: "tensor size overflows".into(),
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            tensors.push(Tensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(NnError::Format {
                offset: r.pos,
                message: "trailing bytes after last tensor".into(),
            });
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(NnError::Format {
                offset: self.pos,
                message: format!("truncated: wanted {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_round_trips_exactly() {
        let mut c = Checkpoint::new();
        c.set_fingerprint(0xdead_beef_0123_4567);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.fingerprint(), Some(0xdead_beef_0123_4567));
    }

    #[test]
    fn truncation_reports_offset() {
        let mut c = Checkpoint::new();
        c.push_vector("x", &[1.0, 2.0]);
        let bytes = c.to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, NnError::Format { .. }));
    }

    #[test]
    fn bad_magic_is_rejected_at_offset_zero() {
        let err = Checkpoint::from_bytes(b"NOPE\x01\0\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(err, NnError::Format { offset: 0, .. }));
    }
}
