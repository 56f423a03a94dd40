//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it stays
//! independent of the reverse sweep it is used to validate.

use crate::error::Result;
use crate::tape::{Matrix, Tape, Var};

/// Outcome of comparing analytic against numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Norm-wise relative error per input tensor.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares `Tape::backward` with central differences of step `h`.
///
/// `build` records a scalar loss from leaves created for `inputs` (all marked
/// trainable) and returns it.
pub fn check_gradients<F>(inputs: &[Matrix], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Matrix> = inputs.to_vec();
    for (t, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        let mut numeric = Matrix::zeros(analytic.dim());
        for idx in 0..inputs[t].len() {
            let (r, c) = (idx / inputs[t].ncols(), idx % inputs[t].ncols());
            let orig = probe[t][[r, c]];
            probe[t][[r, c]] = orig + h;
            let up = eval(&probe)?;
            probe[t][[r, c]] = orig - h;
            let down = eval(&probe)?;
            probe[t][[r, c]] = orig;
            numeric[[r, c]] = (up - down) / (2.0 * h);
        }
        let diff = (&analytic - &numeric).mapv(|v| v * v).sum().sqrt();
        let scale = analytic
            .mapv(|v| v * v)
            .sum()
            .sqrt()
            .max(numeric.mapv(|v| v * v).sum().sqrt())
            .max(1e-8);
        relative_errors.push(diff / scale);
    }
    Ok(GradCheck { relative_errors })
}
