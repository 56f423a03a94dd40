//! State and action variational autoencoders.
//!
//! Both share one implementation: a standardizing input map, an encoder that
//! emits `(μ, log σ²)` and a decoder back to the standardized input space.
//! Downstream code only ever uses the posterior mean.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use reaction_forge_nn::{
    clip_grad_norm, stream, Activation, Adam, AdamConfig, Checkpoint, Matrix, Mlp, Module, OutputActivation, Rng,
    Tape, Var,
};
use reaction_forge_sim::{CharacterSpec, CharacterState};
use serde::{Deserialize, Serialize};

use crate::batch::{gather, rows};
use crate::error::{ForgeError, Result};
use crate::features::{state_feature_len, state_features, Standardizer};
use crate::tracker::Demo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKind {
    State,
    Action,
}

impl LatentKind {
    pub fn name(self) -> &'static str {
        match self {
            LatentKind::State => "state",
            LatentKind::Action => "action",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub latent: usize,
    pub hidden: Vec<usize>,
    pub beta: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl VaeConfig {
    pub fn state() -> Self {
        Self {
            latent: 32,
            hidden: vec![128],
            beta: 1e-3,
            epochs: 30,
            batch: 256,
            lr: 1e-3,
        }
    }

    pub fn action() -> Self {
        Self {
            latent: 16,
            ..Self::state()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.batch == 0 || self.hidden.contains(&0) {
            return Err(ForgeError::Config("vae sizes must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.lr > 0.0) {
            return Err(ForgeError::Config("vae needs beta ≥ 0 and lr > 0".into()));
        }
        Ok(())
    }
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self::state()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub kind: LatentKind,
    pub input: Standardizer,
    /// `d → 2Z`: means in the first `Z` outputs, log-variances after.
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl Module for Vae {
    fn parameters(&self) -> Vec<&Matrix> {
        let mut p = self.encoder.parameters();
        p.extend(self.decoder.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.decoder.parameters_mut());
        p
    }
}

/// The three scalars of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaeLoss {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

impl Vae {
    pub fn new(kind: LatentKind, input: Standardizer, latent: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let d = input.dim();
        let mut enc = vec![d];
        enc.extend_from_slice(hidden);
        enc.push(2 * latent);
        let mut dec = vec![latent];
        dec.extend(hidden.iter().rev());
        dec.push(d);
        Self {
            kind,
            input,
            encoder: Mlp::new(&enc, Activation::Tanh, OutputActivation::Identity, rng),
            decoder: Mlp::new(&dec, Activation::Tanh, OutputActivation::Identity, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    /// Posterior mean of a raw (unstandardized) input.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(ForgeError::Contract(format!(
                "{} encoder expects {} values, got {}",
                self.kind.name(),
                self.input_dim(),
                x.len()
            )));
        }
        let out = self.encoder.forward(&self.input.apply(x))?;
        Ok(out[..self.latent_dim()].to_vec())
    }

    pub fn encode_batch(&self, x: &Matrix) -> Result<Matrix> {
        let mut std = x.clone();
        for mut row in std.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.input.mean[k]) / self.input.std[k];
            }
        }
        let out = self.encoder.forward_batch(&std)?;
        Ok(out.slice(ndarray::s![.., ..self.latent_dim()]).to_owned())
    }

    /// Raw-space reconstruction of a latent.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.input.invert(&self.decoder.forward(z)?))
    }

    /// The mean half of the encoder with input standardization folded into
    /// the first layer, so that it maps raw inputs straight to `μ`.
    pub fn mean_encoder(&self) -> Mlp {
        let mut net = self.encoder.clone();
        let first = &mut net.layers[0];
        for r in 0..first.w.nrows() {
            let mut shift = 0.0;
            for c in 0..first.w.ncols() {
                first.w[[r, c]] /= self.input.std[c];
                shift += first.w[[r, c]] * self.input.mean[c];
            }
            first.b[[0, r]] -= shift;
        }
        let z = self.latent_dim();
        let last = net.layers.last_mut().unwrap();
        last.w = last.w.slice(ndarray::s![..z, ..]).to_owned();
        last.b = last.b.slice(ndarray::s![.., ..z]).to_owned();
        net
    }

    fn prefix(&self) -> String {
        format!("vae.{}", self.kind.name())
    }

    pub fn write_to(&self, c: &mut Checkpoint) {
        let p = self.prefix();
        self.input.write_to(c, &format!("{p}.input"));
        self.encoder.write_to(c, &format!("{p}.encoder"));
        self.decoder.write_to(c, &format!("{p}.decoder"));
    }

    pub fn read_from(c: &Checkpoint, kind: LatentKind) -> Result<Self> {
        let p = format!("vae.{}", kind.name());
        Ok(Self {
            kind,
            input: Standardizer::read_from(c, &format!("{p}.input"))?,
            encoder: Mlp::read_from(c, &format!("{p}.encoder"))?,
            decoder: Mlp::read_from(c, &format!("{p}.decoder"))?,
        })
    }
}

/// `mean(‖x − x̂‖²)` over all entries plus `β` times the batch-mean KL of
/// `N(μ, e^{logvar})` from the standard normal.
pub fn vae_objective(x: &Matrix, recon: &Matrix, mu: &Matrix, logvar: &Matrix, beta: f64) -> Result<VaeLoss> {
    if x.dim() != recon.dim() || mu.dim() != logvar.dim() || x.nrows() != mu.nrows() {
        return Err(ForgeError::Contract("vae objective shape mismatch".into()));
    }
    if x.nrows() == 0 {
        return Err(ForgeError::Contract("vae objective over an empty batch".into()));
    }
    let reconstruction = (x - recon).mapv(|v| v * v).mean().unwrap_or(0.0);
    let mut kl = 0.0;
    for (m, lv) in mu.iter().zip(logvar.iter()) {
        kl += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    kl /= x.nrows() as f64;
    Ok(VaeLoss {
        reconstruction,
        kl,
        total: reconstruction + beta * kl,
    })
}

/// Records the reparameterized objective for a standardized batch `x` with
/// fixed unit-normal draws `eps`. Returns `(total, reconstruction, kl)`.
pub fn vae_loss_tape(
    tape: &mut Tape,
    vae: &Vae,
    params: &[Var],
    x: Var,
    eps: Matrix,
    beta: f64,
) -> Result<(Var, Var, Var)> {
    let z_dim = vae.latent_dim();
    let n_enc = vae.encoder.parameters().len();
    let n = tape.value(x).nrows() as f64;
    let enc = vae.encoder.forward_tape(tape, &params[..n_enc], x)?;
    let mu = tape.slice_cols(enc, 0, z_dim)?;
    let lv = tape.slice_cols(enc, z_dim, 2 * z_dim)?;
    let half = tape.scale(lv, 0.5);
    let sigma = tape.exp(half);
    let e = tape.constant(eps);
    let noise = tape.mul(sigma, e)?;
    let z = tape.add(mu, noise)?;
    let recon = vae.decoder.forward_tape(tape, &params[n_enc..], z)?;
    let diff = tape.sub(recon, x)?;
    let sq = tape.square(diff);
    let rec = tape.mean(sq);
    let mu2 = tape.square(mu);
    let var = tape.exp(lv);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, lv)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    let kl = tape.scale(s, 0.5 / n);
    let weighted = tape.scale(kl, beta);
    let total = tape.add(rec, weighted)?;
    Ok((total, rec, kl))
}

/// Deterministic objective of a raw batch (posterior mean decoded, no noise).
pub fn vae_loss(vae: &Vae, x: &Matrix, beta: f64) -> Result<VaeLoss> {
    let std = standardize(&vae.input, x);
    let enc = vae.encoder.forward_batch(&std)?;
    let z = vae.latent_dim();
    let mu = enc.slice(ndarray::s![.., ..z]).to_owned();
    let lv = enc.slice(ndarray::s![.., z..]).to_owned();
    let recon = vae.decoder.forward_batch(&mu)?;
    vae_objective(&std, &recon, &mu, &lv, beta)
}

/// Mean squared reconstruction error in standardized units.
pub fn reconstruction_mse(vae: &Vae, x: &Matrix) -> Result<f64> {
    Ok(vae_loss(vae, x, 0.0)?.reconstruction)
}

fn standardize(s: &Standardizer, x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - s.mean[k]) / s.std[k];
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Fits a VAE of `kind` on raw rows with Adam. Aborts if the epoch loss
/// stops being finite or exceeds ten times the first epoch's.
pub fn train_vae(data: &Matrix, kind: LatentKind, config: &VaeConfig, seed: u64) -> Result<(Vae, Vec<VaeEpoch>)> {
    config.validate()?;
    if data.nrows() == 0 {
        return Err(ForgeError::Contract("vae training set is empty".into()));
    }
    let input = Standardizer::fit(data.rows().into_iter().map(|r| r.to_slice().unwrap()), data.ncols());
    let mut init = stream(seed, &format!("vae/{}/init", kind.name()));
    let mut vae = Vae::new(kind, input, config.latent, &config.hidden, &mut init);
    let std = standardize(&vae.input, data);
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr), &vae.parameters());
    let mut rng = stream(seed, &format!("vae/{}/batches", kind.name()));
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut first: Option<f64> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut tot, mut rec, mut kl, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch) {
            let x = gather(&std, chunk);
            let eps = Matrix::from_shape_fn((chunk.len(), config.latent), |_| StandardNormal.sample(&mut rng));
            let mut tape = Tape::new();
            let params = vae.bind(&mut tape, true);
            let xv = tape.constant(x);
            let (loss, r, k) = vae_loss_tape(&mut tape, &vae, &params, xv, eps, config.beta)?;
            let w = chunk.len() as f64;
            tot += tape.scalar(loss) * w;
            rec += tape.scalar(r) * w;
            kl += tape.scalar(k) * w;
            seen += chunk.len();
            let mut g = tape.backward(loss)?.collect(&params);
            clip_grad_norm(&mut g, 10.0);
            opt.step(vae.parameters_mut(), &g)?;
        }
        let loss = tot / seen as f64;
        let base = *first.get_or_insert(loss);
        if !loss.is_finite() || loss > 10.0 * base {
            return Err(ForgeError::Divergence(format!(
                "{} vae loss {loss} at epoch {epoch} (first epoch {base})",
                kind.name()
            )));
        }
        curve.push(VaeEpoch {
            epoch,
            loss,
            reconstruction: rec / seen as f64,
            kl: kl / seen as f64,
        });
    }
    Ok((vae, curve))
}

/// State features of every frame of both characters of every demo.
pub fn state_rows(spec: &CharacterSpec, demos: &[Demo]) -> Matrix {
    let v: Vec<Vec<f64>> = demos
        .iter()
        .flat_map(|d| [&d.actor, &d.reactor])
        .flat_map(|t| t.states.iter().map(|s| state_features(spec, s)))
        .collect();
    if v.is_empty() {
        return Matrix::zeros((0, state_feature_len(spec)));
    }
    rows(&v)
}

/// A PD target expressed relative to the current joint angles; this is the
/// quantity the action VAE encodes.
pub fn relative_action(state: &CharacterState, action: &[f64]) -> Vec<f64> {
    action.iter().zip(&state.q).map(|(a, q)| a - q).collect()
}

/// Every recorded PD target of both characters, relative to the pose it
/// was applied from.
pub fn action_rows(spec: &CharacterSpec, demos: &[Demo]) -> Matrix {
    let v: Vec<Vec<f64>> = demos
        .iter()
        .flat_map(|d| [&d.actor, &d.reactor])
        .flat_map(|t| t.actions.iter().zip(&t.states).map(|(a, s)| relative_action(s, &a.0)))
        .collect();
    if v.is_empty() {
        return Matrix::zeros((0, spec.num_joints()));
    }
    rows(&v)
}
