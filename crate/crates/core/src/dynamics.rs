//! Forward dynamics model over VAE latents and its contrastive training.
//!
//! `F(z^s_t, z^a_t)` predicts the direction of the next state latent. It is
//! trained with an InfoNCE objective whose candidate set for row `i` is the
//! true next latent plus every other tuple's current and next latents.

use ndarray::Array2;
use rand::seq::SliceRandom;
use reaction_forge_nn::{
    clip_grad_norm, stream, Activation, Adam, AdamConfig, Checkpoint, Matrix, Mlp, Module, OutputActivation, Rng,
    Tape, Var,
};
use reaction_forge_sim::CharacterSpec;
use serde::{Deserialize, Serialize};

use crate::batch::{gather, normalize_rows, rows};
use crate::error::{ForgeError, Result};
use crate::features::state_features;
use crate::representation::{relative_action, Vae};
use crate::tracker::Demo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdmConfig {
    pub hidden: Vec<usize>,
    pub tau: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Drop the positive from the denominator, as the loss is printed in
    /// the original formulation. Unbounded below; for comparison only.
    pub paper_literal_denominator: bool,
    /// Rows per retrieval-accuracy batch.
    pub eval_batch: usize,
    pub eval_batches: usize,
}

impl Default for FdmConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            tau: 0.07,
            batch: 256,
            epochs: 40,
            lr: 1e-3,
            paper_literal_denominator: false,
            eval_batch: 64,
            eval_batches: 8,
        }
    }
}

impl FdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(ForgeError::Config(format!("temperature must be > 0, got {}", self.tau)));
        }
        if self.batch < 2 || self.eval_batch < 2 {
            return Err(ForgeError::Config("contrastive batches need at least two rows".into()));
        }
        if !(self.lr > 0.0) || self.hidden.contains(&0) {
            return Err(ForgeError::Config("fdm needs lr > 0 and positive layer sizes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardDynamicsModel {
    pub net: Mlp,
}

impl Module for ForwardDynamicsModel {
    fn parameters(&self) -> Vec<&Matrix> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.net.parameters_mut()
    }
}

impl ForwardDynamicsModel {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(state_dim);
        Self {
            net: Mlp::new(&sizes, Activation::Tanh, OutputActivation::Identity, rng),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.input_dim() - self.state_dim()
    }

    /// Unit-norm prediction of the next state latent.
    pub fn forward(&self, z_s: &[f64], z_a: &[f64]) -> Result<Vec<f64>> {
        let mut x = z_s.to_vec();
        x.extend_from_slice(z_a);
        Ok(crate::batch::normalize(&self.net.forward(&x)?))
    }

    pub fn forward_batch(&self, z_s: &Matrix, z_a: &Matrix) -> Result<Matrix> {
        let x = ndarray::concatenate(ndarray::Axis(1), &[z_s.view(), z_a.view()])
            .map_err(|e| ForgeError::Contract(format!("fdm input: {e}")))?;
        let mut out = self.net.forward_batch(&x)?;
        normalize_rows(&mut out);
        Ok(out)
    }

    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], z_s: Var, z_a: Var) -> Result<Var> {
        let x = tape.concat(&[z_s, z_a])?;
        let y = self.net.forward_tape(tape, params, x)?;
        Ok(tape.row_normalize(y))
    }

    pub fn write_to(&self, c: &mut Checkpoint) {
        self.net.write_to(c, "fdm.net");
    }

    pub fn read_from(c: &Checkpoint) -> Result<Self> {
        Ok(Self {
            net: Mlp::read_from(c, "fdm.net")?,
        })
    }
}

/// Unit-norm latent tuples `(z^s_t, z^a_t, z^s_{t+1})` with their origin.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTuples {
    pub current: Matrix,
    pub action: Matrix,
    pub next: Matrix,
    /// `(trajectory index, frame)` of each row.
    pub origin: Vec<(usize, usize)>,
}

impl LatentTuples {
    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            current: gather(&self.current, idx),
            action: gather(&self.action, idx),
            next: gather(&self.next, idx),
            origin: idx.iter().map(|&i| self.origin[i]).collect(),
        }
    }
}

/// Encodes every transition of both characters of every demo.
pub fn latent_tuples(spec: &CharacterSpec, demos: &[Demo], state_vae: &Vae, action_vae: &Vae) -> Result<LatentTuples> {
    let mut s = Vec::new();
    let mut a = Vec::new();
    let mut origin = Vec::new();
    let mut spans = Vec::new();
    for (k, traj) in demos.iter().flat_map(|d| [&d.actor, &d.reactor]).enumerate() {
        let start = s.len();
        s.extend(traj.states.iter().map(|x| state_features(spec, x)));
        spans.push((start, traj.actions.len()));
        for (t, act) in traj.actions.iter().enumerate() {
            a.push(relative_action(&traj.states[t], &act.0));
            origin.push((k, t));
        }
    }
    if origin.is_empty() {
        return Err(ForgeError::Contract("no transitions to encode".into()));
    }
    let mut zs = state_vae.encode_batch(&rows(&s))?;
    normalize_rows(&mut zs);
    let za = action_vae.encode_batch(&rows(&a))?;
    let cur: Vec<usize> = spans.iter().flat_map(|&(st, n)| st..st + n).collect();
    let nxt: Vec<usize> = cur.iter().map(|i| i + 1).collect();
    Ok(LatentTuples {
        current: gather(&zs, &cur),
        action: za,
        next: gather(&zs, &nxt),
        origin,
    })
}

/// Candidate membership for the contrastive loss over logits laid out as
/// `[next_0 .. next_{N-1} | current_0 .. current_{N-1}]`.
fn membership(n: usize, literal: bool) -> Array2<bool> {
    Array2::from_shape_fn((n, 2 * n), |(i, k)| {
        let j = k % n;
        if j != i {
            true
        } else {
            k < n && !literal
        }
    })
}

/// Records the contrastive loss for unit-norm predictions `pred` against the
/// batch's true next latents `next`, using other rows' `current` and `next`
/// latents as negatives.
pub fn contrastive_tape(
    tape: &mut Tape,
    pred: Var,
    current: Var,
    next: Var,
    tau: f64,
    literal: bool,
) -> Result<Var> {
    let n = tape.value(pred).nrows();
    if n < 2 {
        return Err(ForgeError::Contract(format!("contrastive loss needs N ≥ 2, got {n}")));
    }
    if !(tau > 0.0) {
        return Err(ForgeError::Contract(format!("temperature must be > 0, got {tau}")));
    }
    let sn = tape.matmul_nt(pred, next)?;
    let sc = tape.matmul_nt(pred, current)?;
    let sims = tape.concat(&[sn, sc])?;
    let logits = tape.scale(sims, 1.0 / tau);
    Ok(tape.info_nce(logits, (0..n).collect(), membership(n, literal))?)
}

/// Value of the forward-dynamics contrastive loss for unit-norm inputs.
pub fn fdm_contrastive_loss(pred: &Matrix, current: &Matrix, next: &Matrix, tau: f64, literal: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let c = tape.constant(current.clone());
    let x = tape.constant(next.clone());
    let l = contrastive_tape(&mut tape, p, c, x, tau, literal)?;
    Ok(tape.scalar(l))
}

/// Fraction of rows whose true next latent is strictly more similar to the
/// prediction than each of the other `2(N−1)` candidates.
pub fn retrieval_accuracy(fdm: &ForwardDynamicsModel, batch: &LatentTuples) -> Result<f64> {
    let pred = fdm.forward_batch(&batch.current, &batch.action)?;
    Ok(ranked_first(&pred, &batch.current, &batch.next))
}

/// Retrieval accuracy of precomputed unit-norm predictions.
pub fn ranked_first(pred: &Matrix, current: &Matrix, next: &Matrix) -> f64 {
    let n = pred.nrows();
    if n == 0 {
        return 0.0;
    }
    let sn = pred.dot(&next.t());
    let sc = pred.dot(&current.t());
    let mut hits = 0;
    for i in 0..n {
        let pos = sn[[i, i]];
        let beaten = (0..n).filter(|&j| j != i).any(|j| sn[[i, j]] >= pos || sc[[i, j]] >= pos);
        if !beaten {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Frames closer than this within one trajectory are not put in the same
/// evaluation batch; adjacent frames are near-duplicates of each other.
pub const EVAL_MIN_GAP: usize = 10;

/// `count` evaluation batches of up to `n` rows with no two rows from the
/// same trajectory within [`EVAL_MIN_GAP`] frames.
pub fn eval_batches(tuples: &LatentTuples, n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = stream(seed, "fdm/eval");
    let mut out = Vec::with_capacity(count);
    let mut order: Vec<usize> = (0..tuples.len()).collect();
    for _ in 0..count {
        order.shuffle(&mut rng);
        let mut picked: Vec<usize> = Vec::with_capacity(n);
        for &i in &order {
            if picked.len() == n {
                break;
            }
            let (ti, fi) = tuples.origin[i];
            let clash = picked.iter().any(|&j| {
                let (tj, fj) = tuples.origin[j];
                tj == ti && fi.abs_diff(fj) < EVAL_MIN_GAP
            });
            if !clash {
                picked.push(i);
            }
        }
        out.push(picked);
    }
    out
}

/// Mean retrieval accuracy over spaced evaluation batches.
pub fn heldout_retrieval(fdm: &ForwardDynamicsModel, tuples: &LatentTuples, config: &FdmConfig, seed: u64) -> Result<f64> {
    let batches = eval_batches(tuples, config.eval_batch, config.eval_batches, seed);
    let mut acc = 0.0;
    let mut used = 0;
    for b in &batches {
        if b.len() < 2 {
            continue;
        }
        acc += retrieval_accuracy(fdm, &tuples.select(b))?;
        used += 1;
    }
    Ok(if used == 0 { 0.0 } else { acc / used as f64 })
}

#[derive(Debug, Clone, Serialize)]
pub struct FdmEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub retrieval: f64,
}

pub fn new_fdm(state_dim: usize, action_dim: usize, config: &FdmConfig, seed: u64) -> ForwardDynamicsModel {
    ForwardDynamicsModel::new(state_dim, action_dim, &config.hidden, &mut stream(seed, "fdm/init"))
}

/// Trains `F` on `train` tuples; retrieval accuracy on `eval` is recorded
/// after every epoch.
pub fn train_fdm(
    train: &LatentTuples,
    eval: &LatentTuples,
    config: &FdmConfig,
    seed: u64,
) -> Result<(ForwardDynamicsModel, Vec<FdmEpoch>)> {
    config.validate()?;
    if train.len() < 2 {
        return Err(ForgeError::Contract("fdm training needs at least two tuples".into()));
    }
    let mut fdm = new_fdm(train.current.ncols(), train.action.ncols(), config, seed);
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr), &fdm.parameters());
    let mut rng = stream(seed, "fdm/batches");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut first: Option<f64> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let b = train.select(chunk);
            let mut tape = Tape::new();
            let params = fdm.bind(&mut tape, true);
            let zs = tape.constant(b.current.clone());
            let za = tape.constant(b.action);
            let zn = tape.constant(b.next);
            let pred = fdm.forward_tape(&mut tape, &params, zs, za)?;
            let loss = contrastive_tape(&mut tape, pred, zs, zn, config.tau, config.paper_literal_denominator)?;
            total += tape.scalar(loss) * chunk.len() as f64;
            seen += chunk.len();
            let mut g = tape.backward(loss)?.collect(&params);
            clip_grad_norm(&mut g, 10.0);
            opt.step(fdm.parameters_mut(), &g)?;
        }
        let loss = total / seen.max(1) as f64;
        let base = *first.get_or_insert(loss.abs().max(1e-12));
        if !loss.is_finite() || loss > 10.0 * base {
            return Err(ForgeError::Divergence(format!(
                "fdm loss {loss} at epoch {epoch} (first epoch {base})"
            )));
        }
        let retrieval = if eval.len() >= 2 {
            heldout_retrieval(&fdm, eval, config, seed)?
        } else {
            f64::NAN
        };
        curve.push(FdmEpoch { epoch, loss, retrieval });
    }
    Ok((fdm, curve))
}
