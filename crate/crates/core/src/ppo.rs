//! Clipped-surrogate policy optimization with generalized advantage estimates.

use rand::seq::SliceRandom;
use reaction_forge_nn::{clip_grad_norm, Adam, GaussianHead, Matrix, Mlp, Module, Rng, Tape};
use serde::{Deserialize, Serialize};

use crate::batch::{column, rows};
use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Environment steps collected per update.
    pub horizon: usize,
    pub entropy_coef: f64,
    pub lr: f64,
    pub value_lr: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 256,
            horizon: 2048,
            entropy_coef: 0.0,
            lr: 1e-4,
            value_lr: 1e-3,
            max_grad_norm: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ForgeError::Config(format!("discount must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda <= 1.0) {
            return Err(ForgeError::Config(format!("GAE lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.clip > 0.0) {
            return Err(ForgeError::Config("clip must be positive".into()));
        }
        if self.minibatch == 0 || self.horizon == 0 {
            return Err(ForgeError::Config("minibatch and horizon must be positive".into()));
        }
        Ok(())
    }
}

/// One collected step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// Value of the successor state; zero after a terminal step.
    pub next_value: f64,
    /// The segment ends after this step (terminal or truncated).
    pub end: bool,
}

/// `(advantages, returns)` by backward recursion over segments.
pub fn gae(steps: &[Transition], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = vec![0.0; steps.len()];
    let mut running = 0.0;
    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        if s.end {
            running = 0.0;
        }
        let delta = s.reward + gamma * s.next_value - s.value;
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(steps).map(|(a, s)| a + s.value).collect();
    (adv, ret)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss_before: f64,
    pub value_loss_after: f64,
    /// Sample estimate of KL(old ‖ new) on the batch.
    pub kl: f64,
    pub entropy: f64,
    pub value_lr: f64,
    pub rejected: Option<String>,
}

fn value_loss(value: &Mlp, obs: &Matrix, returns: &[f64]) -> Result<f64> {
    let pred = value.forward_batch(obs)?;
    Ok(pred
        .iter()
        .zip(returns)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        / returns.len().max(1) as f64)
}

/// Entropy of a diagonal Gaussian with the given log standard deviations.
pub fn gaussian_entropy(log_std: &Matrix) -> f64 {
    let c = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    log_std.iter().map(|l| l + c).sum()
}

/// Clipped-surrogate update of `head` and regression of `value` on the
/// returns. The value step size is halved whenever an update fails to lower
/// the value loss on the batch.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    head: &mut GaussianHead,
    value: &mut Mlp,
    policy_opt: &mut Adam,
    value_opt: &mut Adam,
    steps: &[Transition],
    config: &PpoConfig,
    rng: &mut Rng,
) -> Result<PpoStats> {
    config.validate()?;
    let (adv, returns) = gae(steps, config.gamma, config.lambda);
    if let Some(i) = adv.iter().position(|a| !a.is_finite()) {
        return Ok(PpoStats {
            rejected: Some(format!("non-finite advantage at step {i}; batch skipped")),
            value_lr: value_opt.config.lr,
            ..Default::default()
        });
    }
    let n = steps.len();
    let mean = adv.iter().sum::<f64>() / n as f64;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let adv: Vec<f64> = adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect();

    let all_obs = rows(&steps.iter().map(|s| &s.obs).collect::<Vec<_>>());
    let value_before = value_loss(value, &all_obs, &returns)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut policy_loss = 0.0;
    let mut batches = 0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let obs = rows(&chunk.iter().map(|&i| &steps[i].obs).collect::<Vec<_>>());
            let acts = rows(&chunk.iter().map(|&i| &steps[i].action).collect::<Vec<_>>());
            let old: Vec<f64> = chunk.iter().map(|&i| steps[i].log_prob).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();

            let mut tape = Tape::new();
            let params = head.bind(&mut tape, true);
            let x = tape.constant(obs.clone());
            let mu = head.mean.forward_tape(&mut tape, &params[..params.len() - 1], x)?;
            let lp = tape.gaussian_log_prob(mu, params[params.len() - 1], acts)?;
            let loss = tape.ppo_clip(lp, old, a, config.clip)?;
            policy_loss += tape.scalar(loss);
            batches += 1;
            let grads = tape.backward(loss)?;
            let mut g = grads.collect(&params);
            if config.entropy_coef != 0.0 {
                // −c·H has slope −c in every log-std entry
                g.last_mut().unwrap().mapv_inplace(|v| v - config.entropy_coef);
            }
            clip_grad_norm(&mut g, config.max_grad_norm);
            policy_opt.step(head.parameters_mut(), &g)?;

            let ret = column(&chunk.iter().map(|&i| returns[i]).collect::<Vec<_>>());
            let mut tape = Tape::new();
            let vp = value.bind(&mut tape, true);
            let x = tape.constant(obs);
            let pred = value.forward_tape(&mut tape, &vp, x)?;
            let target = tape.constant(ret);
            let diff = tape.sub(pred, target)?;
            let sq = tape.square(diff);
            let vloss = tape.mean(sq);
            let mut g = tape.backward(vloss)?.collect(&vp);
            clip_grad_norm(&mut g, config.max_grad_norm);
            value_opt.step(value.parameters_mut(), &g)?;
        }
    }
    let value_after = value_loss(value, &all_obs, &returns)?;
    if value_after >= value_before {
        value_opt.config.lr *= 0.5;
    }
    let mut kl = 0.0;
    for s in steps {
        kl += s.log_prob - head.log_prob(&s.obs, &s.action)?;
    }
    Ok(PpoStats {
        policy_loss: policy_loss / batches.max(1) as f64,
        value_loss_before: value_before,
        value_loss_after: value_after,
        kl: kl / n as f64,
        entropy: gaussian_entropy(&head.log_std),
        value_lr: value_opt.config.lr,
        rejected: None,
    })
}
