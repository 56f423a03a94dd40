//! Small helpers for assembling minibatches and fingerprinting parameters.

use ndarray::Array2;
use reaction_forge_nn::{Matrix, Module};
use sha2::{Digest, Sha256};

/// Stacks equally long rows into a matrix.
pub fn rows<R: AsRef<[f64]>>(data: &[R]) -> Matrix {
    let d = data.first().map(|r| r.as_ref().len()).unwrap_or(0);
    Array2::from_shape_fn((data.len(), d), |(i, k)| data[i].as_ref()[k])
}

/// Rows of `m` selected by `idx`.
pub fn gather(m: &Matrix, idx: &[usize]) -> Matrix {
    Array2::from_shape_fn((idx.len(), m.ncols()), |(i, k)| m[[idx[i], k]])
}

pub fn column(data: &[f64]) -> Matrix {
    Array2::from_shape_fn((data.len(), 1), |(i, _)| data[i])
}

/// Scales every row of `m` to unit norm in place.
pub fn normalize_rows(m: &mut Matrix) {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt().max(1e-12);
        row /= n;
    }
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

/// SHA-256 over the exact bit patterns of every parameter, hex encoded.
pub fn parameter_digest(module: &impl Module) -> String {
    let mut h = Sha256::new();
    for p in module.parameters() {
        h.update((p.nrows() as u64).to_le_bytes());
        h.update((p.ncols() as u64).to_le_bytes());
        for v in p.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
