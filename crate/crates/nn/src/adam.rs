use crate::checkpoint::Checkpoint;
use crate::error::{NnError, Result};
use crate::tape::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moments for one ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.dim())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update in place. Rejects non-finite gradients before
    /// touching any state.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(NnError::Contract(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || p.dim() != self.m[i].dim() {
                return Err(NnError::Shape {
                    context: "adam step",
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::Divergence(format!(
                    "non-finite gradient in parameter tensor {i}"
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let c = self.config;
        ckpt.push_vector(
            &format!("{prefix}.config"),
            &[c.lr, c.beta1, c.beta2, c.eps, self.step as f64],
        );
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            ckpt.push_matrix(&format!("{prefix}.m{i}"), m);
            ckpt.push_matrix(&format!("{prefix}.v{i}"), v);
        }
    }

    pub fn read_from(ckpt: &Checkpoint, prefix: &str, slots: usize) -> Result<Self> {
        let c = ckpt.vector(&format!("{prefix}.config"))?;
        if c.len() != 5 {
            return Err(NnError::Contract(format!("malformed adam header under `{prefix}`")));
        }
        let mut m = Vec::with_capacity(slots);
        let mut v = Vec::with_capacity(slots);
        for i in 0..slots {
            m.push(ckpt.matrix(&format!("{prefix}.m{i}"))?);
            v.push(ckpt.matrix(&format!("{prefix}.v{i}"))?);
        }
        Ok(Self {
            config: AdamConfig {
                lr: c[0],
                beta1: c[1],
                beta2: c[2],
                eps: c[3],
            },
            step: c[4] as u64,
            m,
            v,
        })
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before rescaling.
pub fn clip_grad_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = array![[1.0, -2.0], [0.5, 3.0]];
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        for _ in 0..5 {
            adam.step(vec![&mut p], &[Matrix::zeros((2, 2))]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn scalar_update_from_known_moments() {
        // Step 3 with m = 0.2, v = 0.01 and gradient 0.5.
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut p = array![[1.0]];
        let mut adam = Adam::new(cfg, &[&p]);
        adam.step = 2;
        adam.m[0] = array![[0.2]];
        adam.v[0] = array![[0.01]];
        adam.step(vec![&mut p], &[array![[0.5]]]).unwrap();
        let m = 0.9 * 0.2 + 0.1 * 0.5; // 0.23
        let v = 0.999 * 0.01 + 0.001 * 0.25; // 0.01024
        let m_hat = m / (1.0 - 0.9f64.powi(3));
        let v_hat = v / (1.0 - 0.999f64.powi(3));
        let expected = 1.0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[[0, 0]] - expected).abs() < 1e-14);
        assert!((adam.m[0][[0, 0]] - 0.23).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_still_updates_moments() {
        let mut p = array![[2.0]];
        let mut adam = Adam::new(AdamConfig::with_lr(0.0), &[&p]);
        adam.step(vec![&mut p], &[array![[1.0]]]).unwrap();
        assert_eq!(p[[0, 0]], 2.0);
        assert!((adam.m[0][[0, 0]] - 0.1).abs() < 1e-15);
        assert!(adam.v[0][[0, 0]] > 0.0);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = array![[2.0]];
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        let err = adam.step(vec![&mut p], &[array![[f64::NAN]]]).unwrap_err();
        assert!(matches!(err, NnError::Divergence(_)));
        assert_eq!(adam.step, 0);
        assert_eq!(p[[0, 0]], 2.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![array![[3.0, 4.0]]];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0][[0, 0]] - 0.6).abs() < 1e-15);
    }
}
