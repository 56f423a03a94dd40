//! Diagonal-Gaussian policy head with a state-independent standard deviation.

use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::Checkpoint;
use crate::error::{NnError, Result};
use crate::mlp::{Mlp, Module};
use crate::rng::Rng;
use crate::tape::Matrix;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Return the mean; no randomness is consumed.
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Mlp,
    /// `1 × action_dim`
    pub log_std: Matrix,
}

impl GaussianHead {
    pub fn new(mean: Mlp, log_std: f64) -> Self {
        let d = mean.output_dim();
        Self {
            mean,
            log_std: Matrix::from_elem((1, d), log_std),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.ncols()
    }

    /// Log density of `action` under `N(mean, diag(exp(log_std))²)`.
    pub fn density(&self, mean: &[f64], action: &[f64]) -> Result<f64> {
        if mean.len() != self.action_dim() || action.len() != self.action_dim() {
            return Err(NnError::Shape {
                context: "gaussian density",
                expected: vec![self.action_dim()],
                got: vec![action.len()],
            });
        }
        let mut lp = 0.0;
        for k in 0..mean.len() {
            let ls = self.log_std[[0, k]];
            let z = (action[k] - mean[k]) * (-ls).exp();
            lp += -0.5 * z * z - ls - HALF_LOG_TWO_PI;
        }
        Ok(lp)
    }

    pub fn mean_action(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.mean.forward(x)
    }

    /// Draws an action and returns it with its log density.
    pub fn sample(&self, x: &[f64], rng: &mut Rng, mode: SampleMode) -> Result<(Vec<f64>, f64)> {
        let mu = self.mean.forward(x)?;
        let action = match mode {
            SampleMode::Deterministic => mu.clone(),
            SampleMode::Stochastic => mu
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let eps: f64 = StandardNormal.sample(rng);
                    m + self.log_std[[0, k]].exp() * eps
                })
                .collect(),
        };
        let lp = self.density(&mu, &action)?;
        Ok((action, lp))
    }

    pub fn log_prob(&self, x: &[f64], action: &[f64]) -> Result<f64> {
        let mu = self.mean.forward(x)?;
        self.density(&mu, action)
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        self.mean.write_to(ckpt, &format!("{prefix}.mean"));
        ckpt.push_matrix(&format!("{prefix}.log_std"), &self.log_std);
    }

    pub fn read_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let mean = Mlp::read_from(ckpt, &format!("{prefix}.mean"))?;
        let log_std = ckpt.matrix(&format!("{prefix}.log_std"))?;
        if log_std.dim() != (1, mean.output_dim()) {
            return Err(NnError::Contract("log_std width differs from mean output".into()));
        }
        Ok(Self { mean, log_std })
    }
}

impl Module for GaussianHead {
    fn parameters(&self) -> Vec<&Matrix> {
        let mut p = self.mean.parameters();
        p.push(&self.log_std);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.mean.parameters_mut();
        p.push(&mut self.log_std);
        p
    }
}
