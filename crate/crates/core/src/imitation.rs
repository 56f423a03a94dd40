//! Forward-dynamics-guided imitation: the reaction policy, its three-term
//! loss, online closed-loop rollout and the long-horizon latent study.
//!
//! The policy outputs a residual on the reactor's current joint angles; the
//! PD target is `clamp(q^react_t + residual)`. The regularizer acts on the
//! residual.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use reaction_forge_nn::{
    clip_grad_norm, stream, Activation, Adam, AdamConfig, Checkpoint, GaussianHead, Matrix, Mlp, Module,
    OutputActivation, Rng, SampleMode, Tape, Var,
};
use reaction_forge_sim::{capsules, Action, CharacterSpec, CharacterState, Simulator};
use serde::{Deserialize, Serialize};

use crate::batch::{gather, normalize, normalize_rows, rows};
use crate::dynamics::{ForwardDynamicsModel, LatentTuples};
use crate::error::{ForgeError, Result};
use crate::features::{sim_state_feature_len, sim_state_features, state_features, Standardizer};
use crate::motion::MotionSequence;
use crate::representation::Vae;
use crate::tracker::Demo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub tau: f64,
    pub w_bc: f64,
    pub w_fd: f64,
    pub w_reg: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub paper_literal_denominator: bool,
    pub action_loss: ActionLoss,
}

/// How the policy's action is compared with the demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionLoss {
    /// InfoNCE between unit action latents.
    Contrastive,
    /// Squared error of the standardized relative action; ablation only.
    L2,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            init_log_std: 0.05f64.ln(),
            tau: 0.07,
            w_bc: 1.0,
            w_fd: 1.0,
            w_reg: 1.0,
            batch: 1024,
            epochs: 60,
            lr: 3e-4,
            paper_literal_denominator: false,
            action_loss: ActionLoss::Contrastive,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(ForgeError::Config(format!("temperature must be > 0, got {}", self.tau)));
        }
        if self.batch < 2 {
            return Err(ForgeError::Config("policy batch needs at least two rows".into()));
        }
        if [self.w_bc, self.w_fd, self.w_reg].iter().any(|w| !(*w >= 0.0)) {
            return Err(ForgeError::Config("loss weights must be ≥ 0".into()));
        }
        if !(self.lr > 0.0) || self.hidden.contains(&0) {
            return Err(ForgeError::Config("policy needs lr > 0 and positive layer sizes".into()));
        }
        Ok(())
    }

    /// The same configuration with the forward-dynamics term switched off.
    pub fn without_fdm(&self) -> Self {
        Self {
            w_fd: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionPolicy {
    pub head: GaussianHead,
    pub input: Standardizer,
}

impl Module for ReactionPolicy {
    fn parameters(&self) -> Vec<&Matrix> {
        self.head.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.head.parameters_mut()
    }
}

impl ReactionPolicy {
    pub fn new(spec: &CharacterSpec, hidden: &[usize], init_log_std: f64, input: Standardizer, rng: &mut Rng) -> Self {
        let mut sizes = vec![sim_state_feature_len(spec)];
        sizes.extend_from_slice(hidden);
        sizes.push(spec.num_joints());
        let mut mean = Mlp::new(&sizes, Activation::Tanh, OutputActivation::Identity, rng);
        mean.scale_output_layer(0.01);
        Self {
            head: GaussianHead::new(mean, init_log_std),
            input,
        }
    }

    pub fn observe(
        &self,
        spec: &CharacterSpec,
        actor: &CharacterState,
        reactor: &CharacterState,
        actor_next: &CharacterState,
    ) -> Vec<f64> {
        self.input.apply(&sim_state_features(spec, actor, reactor, actor_next))
    }

    /// `(clamped PD target, raw residual)`.
    pub fn act(
        &self,
        spec: &CharacterSpec,
        obs: &[f64],
        reactor: &CharacterState,
        rng: &mut Rng,
        mode: SampleMode,
    ) -> Result<(Action, Vec<f64>)> {
        let (residual, _) = self.head.sample(obs, rng, mode)?;
        let target = Action(reactor.q.iter().zip(&residual).map(|(q, r)| q + r).collect()).clamped(spec);
        Ok((target, residual))
    }

    /// Clamped mean PD targets for raw feature rows and the matching
    /// reactor joint angles.
    pub fn mean_targets(&self, spec: &CharacterSpec, features: &Matrix, base: &Matrix) -> Result<Matrix> {
        let mut x = features.clone();
        for mut row in x.rows_mut() {
            let z = self.input.apply(row.as_slice().unwrap());
            row.assign(&ndarray::ArrayView1::from(&z));
        }
        let mut out = self.head.mean.forward_batch(&x)? + base;
        for mut row in out.rows_mut() {
            for (a, j) in row.iter_mut().zip(&spec.joints) {
                *a = a.clamp(j.lower, j.upper);
            }
        }
        Ok(out)
    }

    pub fn write_to(&self, c: &mut Checkpoint) {
        self.head.write_to(c, "policy.head");
        self.input.write_to(c, "policy.input");
    }

    pub fn read_from(c: &Checkpoint) -> Result<Self> {
        Ok(Self {
            head: GaussianHead::read_from(c, "policy.head")?,
            input: Standardizer::read_from(c, "policy.input")?,
        })
    }
}

/// The frozen parts of the loss: the action encoder (standardization folded
/// in, mean outputs only) and the forward dynamics model.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModels {
    pub action_encoder: Mlp,
    pub fdm: ForwardDynamicsModel,
    /// Per-joint spread of demonstrated relative actions; only the L2
    /// ablation uses it.
    pub action_scale: Vec<f64>,
}

impl FrozenModels {
    pub fn new(action_vae: &Vae, fdm: &ForwardDynamicsModel) -> Self {
        Self {
            action_encoder: action_vae.mean_encoder(),
            fdm: fdm.clone(),
            action_scale: action_vae.input.std.clone(),
        }
    }
}

/// Reactor-side training tuples of the imitation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ImitationData {
    /// Raw policy features of `(actor_t, reactor_t, actor_{t+1})`.
    pub features: Matrix,
    /// Reactor joint angles at `t`; the residual is added to these.
    pub base: Matrix,
    /// Raw demonstrated PD targets.
    pub actions: Matrix,
    /// Unit action latents of `actions - base`.
    pub action_latent: Matrix,
    /// Unit state latents of the reactor at `t` and `t + 1`.
    pub state_latent: Matrix,
    pub next_latent: Matrix,
    /// `(demo index, frame)` per row.
    pub origin: Vec<(usize, usize)>,
}

impl ImitationData {
    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: gather(&self.features, idx),
            base: gather(&self.base, idx),
            actions: gather(&self.actions, idx),
            action_latent: gather(&self.action_latent, idx),
            state_latent: gather(&self.state_latent, idx),
            next_latent: gather(&self.next_latent, idx),
            origin: idx.iter().map(|&i| self.origin[i]).collect(),
        }
    }

    /// Rows whose demo index satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.origin[i].0)).collect();
        self.select(&idx)
    }

    /// Replaces the action labels (and their latents).
    pub fn relabel(&mut self, actions: Matrix, action_vae: &Vae) -> Result<()> {
        if actions.dim() != self.actions.dim() {
            return Err(ForgeError::Contract("relabel shape mismatch".into()));
        }
        let mut z = action_vae.encode_batch(&(&actions - &self.base))?;
        normalize_rows(&mut z);
        self.actions = actions;
        self.action_latent = z;
        Ok(())
    }

    pub fn concat(parts: &[&ImitationData]) -> Self {
        let cat = |f: &dyn Fn(&ImitationData) -> &Matrix| {
            let views: Vec<_> = parts.iter().map(|p| f(p).view()).collect();
            ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
        };
        Self {
            features: cat(&|p| &p.features),
            base: cat(&|p| &p.base),
            actions: cat(&|p| &p.actions),
            action_latent: cat(&|p| &p.action_latent),
            state_latent: cat(&|p| &p.state_latent),
            next_latent: cat(&|p| &p.next_latent),
            origin: parts.iter().flat_map(|p| p.origin.iter().copied()).collect(),
        }
    }
}

/// Reactor transitions `(s_t, a_t, s_{t+1})` with their actor context.
pub struct ReactorStep<'a> {
    pub actor: &'a CharacterState,
    pub actor_next: &'a CharacterState,
    pub reactor: &'a CharacterState,
    pub action: &'a [f64],
    pub reactor_next: &'a CharacterState,
    pub origin: (usize, usize),
}

pub fn imitation_data_from_steps(
    spec: &CharacterSpec,
    steps: &[ReactorStep],
    state_vae: &Vae,
    action_vae: &Vae,
) -> Result<ImitationData> {
    let j = spec.num_joints();
    if steps.is_empty() {
        let z = |d| Matrix::zeros((0, d));
        return Ok(ImitationData {
            features: z(sim_state_feature_len(spec)),
            base: z(j),
            actions: z(j),
            action_latent: z(action_vae.latent_dim()),
            state_latent: z(state_vae.latent_dim()),
            next_latent: z(state_vae.latent_dim()),
            origin: Vec::new(),
        });
    }
    let features: Vec<Vec<f64>> = steps
        .iter()
        .map(|s| sim_state_features(spec, s.actor, s.reactor, s.actor_next))
        .collect();
    let base: Vec<&[f64]> = steps.iter().map(|s| s.reactor.q.as_slice()).collect();
    let actions: Vec<&[f64]> = steps.iter().map(|s| s.action).collect();
    let cur: Vec<Vec<f64>> = steps.iter().map(|s| state_features(spec, s.reactor)).collect();
    let nxt: Vec<Vec<f64>> = steps.iter().map(|s| state_features(spec, s.reactor_next)).collect();
    let actions = rows(&actions);
    let base = rows(&base);
    let mut action_latent = action_vae.encode_batch(&(&actions - &base))?;
    normalize_rows(&mut action_latent);
    let mut state_latent = state_vae.encode_batch(&rows(&cur))?;
    normalize_rows(&mut state_latent);
    let mut next_latent = state_vae.encode_batch(&rows(&nxt))?;
    normalize_rows(&mut next_latent);
    Ok(ImitationData {
        features: rows(&features),
        base,
        actions,
        action_latent,
        state_latent,
        next_latent,
        origin: steps.iter().map(|s| s.origin).collect(),
    })
}

/// Every reactor transition of every demo.
pub fn imitation_data(spec: &CharacterSpec, demos: &[Demo], state_vae: &Vae, action_vae: &Vae) -> Result<ImitationData> {
    let mut steps = Vec::new();
    for (d, demo) in demos.iter().enumerate() {
        let (a, r) = (&demo.actor, &demo.reactor);
        let n = a.states.len().min(r.states.len()).saturating_sub(1).min(r.actions.len());
        for t in 0..n {
            steps.push(ReactorStep {
                actor: &a.states[t],
                actor_next: &a.states[t + 1],
                reactor: &r.states[t],
                action: &r.actions[t].0,
                reactor_next: &r.states[t + 1],
                origin: (d, t),
            });
        }
    }
    imitation_data_from_steps(spec, &steps, state_vae, action_vae)
}

fn row_infonce(tape: &mut Tape, pred: Var, target: Var, tau: f64, literal: bool) -> Result<Var> {
    let n = tape.value(pred).nrows();
    if n < 2 {
        return Err(ForgeError::Contract(format!("contrastive loss needs N ≥ 2, got {n}")));
    }
    if !(tau > 0.0) {
        return Err(ForgeError::Contract(format!("temperature must be > 0, got {tau}")));
    }
    let sims = tape.matmul_nt(pred, target)?;
    let logits = tape.scale(sims, 1.0 / tau);
    let member = Array2::from_shape_fn((n, n), |(i, j)| i != j || !literal);
    Ok(tape.info_nce(logits, (0..n).collect(), member)?)
}

/// Contrastive action term: unit policy action latents against the demo
/// action latents of the same batch.
pub fn loss_bc_tape(tape: &mut Tape, policy_latent: Var, demo_latent: Var, tau: f64, literal: bool) -> Result<Var> {
    row_infonce(tape, policy_latent, demo_latent, tau, literal)
}

/// Contrastive state term: unit forward-dynamics forecasts against the demo
/// next-state latents of the same batch.
pub fn loss_fd_tape(tape: &mut Tape, forecast: Var, next_latent: Var, tau: f64, literal: bool) -> Result<Var> {
    row_infonce(tape, forecast, next_latent, tau, literal)
}

pub fn loss_bc(policy_latent: &Matrix, demo_latent: &Matrix, tau: f64, literal: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(policy_latent.clone());
    let d = tape.constant(demo_latent.clone());
    let l = loss_bc_tape(&mut tape, p, d, tau, literal)?;
    Ok(tape.scalar(l))
}

pub fn loss_fd(forecast: &Matrix, next_latent: &Matrix, tau: f64, literal: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(forecast.clone());
    let d = tape.constant(next_latent.clone());
    let l = loss_fd_tape(&mut tape, p, d, tau, literal)?;
    Ok(tape.scalar(l))
}

/// Batch mean of the squared norm of each row.
pub fn regularizer(actions: &Matrix) -> f64 {
    if actions.nrows() == 0 {
        return 0.0;
    }
    actions.mapv(|v| v * v).sum() / actions.nrows() as f64
}

/// Weighted loss components; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImitationLossReport {
    pub bc: f64,
    pub fd: f64,
    pub reg: f64,
    pub total: f64,
}

impl ImitationLossReport {
    fn from_parts(bc: f64, fd: f64, reg: f64) -> Self {
        Self {
            bc,
            fd,
            reg,
            total: bc + fd + reg,
        }
    }
}

/// Recorded imitation loss of one batch.
pub struct LossNodes {
    pub total: Var,
    pub bc: Var,
    pub fd: Var,
    pub reg: Var,
}

/// Records the weighted loss for policy parameters `params` (bound in
/// `policy.parameters()` order). Frozen models enter as constants.
pub fn imitation_loss_tape(
    tape: &mut Tape,
    policy: &ReactionPolicy,
    params: &[Var],
    frozen: &FrozenModels,
    batch: &ImitationData,
    config: &PolicyConfig,
) -> Result<LossNodes> {
    let n = batch.len();
    let lit = config.paper_literal_denominator;
    let x = tape.constant(standardize_rows(&policy.input, &batch.features));
    let n_mean = policy.head.mean.parameters().len();
    let residual = policy.head.mean.forward_tape(tape, &params[..n_mean], x)?;
    let enc_params = frozen.action_encoder.bind(tape, false);
    let za = frozen.action_encoder.forward_tape(tape, &enc_params, residual)?;
    let za_unit = tape.row_normalize(za);
    let demo_za = tape.constant(batch.action_latent.clone());
    let bc = match config.action_loss {
        ActionLoss::Contrastive => loss_bc_tape(tape, za_unit, demo_za, config.tau, lit)?,
        ActionLoss::L2 => {
            let inv = Matrix::from_shape_fn((n, frozen.action_scale.len()), |(_, k)| 1.0 / frozen.action_scale[k]);
            let target = tape.constant(&batch.actions - &batch.base);
            let d = tape.sub(residual, target)?;
            let w = tape.constant(inv);
            let d = tape.mul(d, w)?;
            let sq = tape.square(d);
            let s = tape.sum(sq);
            tape.scale(s, 1.0 / n as f64)
        }
    };
    let bc = tape.scale(bc, config.w_bc);

    let fd = if config.w_fd != 0.0 {
        let fdm_params = frozen.fdm.bind(tape, false);
        let zs = tape.constant(batch.state_latent.clone());
        let forecast = frozen.fdm.forward_tape(tape, &fdm_params, zs, za)?;
        let next = tape.constant(batch.next_latent.clone());
        let fd = loss_fd_tape(tape, forecast, next, config.tau, lit)?;
        tape.scale(fd, config.w_fd)
    } else {
        tape.constant(Matrix::zeros((1, 1)))
    };

    let sq = tape.square(residual);
    let s = tape.sum(sq);
    let reg = tape.scale(s, config.w_reg / n as f64);
    let a = tape.add(bc, fd)?;
    let total = tape.add(a, reg)?;
    Ok(LossNodes { total, bc, fd, reg })
}

fn standardize_rows(s: &Standardizer, x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - s.mean[k]) / s.std[k];
        }
    }
    out
}

/// Loss of `data` evaluated in fixed consecutive batches (no shuffling);
/// a trailing batch of one row is dropped.
pub fn evaluate_losses(
    policy: &ReactionPolicy,
    frozen: &FrozenModels,
    data: &ImitationData,
    config: &PolicyConfig,
) -> Result<ImitationLossReport> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut bc, mut fd, mut reg, mut seen) = (0.0, 0.0, 0.0, 0usize);
    for chunk in idx.chunks(config.batch) {
        if chunk.len() < 2 {
            continue;
        }
        let b = data.select(chunk);
        let mut tape = Tape::new();
        let params = policy.bind(&mut tape, false);
        let nodes = imitation_loss_tape(&mut tape, policy, &params, frozen, &b, config)?;
        let w = chunk.len() as f64;
        bc += tape.scalar(nodes.bc) * w;
        fd += tape.scalar(nodes.fd) * w;
        reg += tape.scalar(nodes.reg) * w;
        seen += chunk.len();
    }
    if seen == 0 {
        return Err(ForgeError::Contract("loss evaluation needs at least two rows".into()));
    }
    let n = seen as f64;
    Ok(ImitationLossReport::from_parts(bc / n, fd / n, reg / n))
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyEpoch {
    pub epoch: usize,
    pub loss: ImitationLossReport,
}

/// A fresh policy whose input standardizer is fitted on `data`.
pub fn new_policy(spec: &CharacterSpec, data: &ImitationData, config: &PolicyConfig, seed: u64) -> ReactionPolicy {
    let input = Standardizer::fit(
        data.features.rows().into_iter().map(|r| r.to_slice().unwrap()),
        sim_state_feature_len(spec),
    );
    ReactionPolicy::new(spec, &config.hidden, config.init_log_std, input, &mut stream(seed, "policy/init"))
}

/// Minimizes the weighted imitation loss over shuffled minibatches of
/// `data`, starting from `policy`. Only the policy's parameters move.
pub fn train_policy(
    mut policy: ReactionPolicy,
    data: &ImitationData,
    frozen: &FrozenModels,
    config: &PolicyConfig,
    seed: u64,
) -> Result<(ReactionPolicy, Vec<PolicyEpoch>)> {
    config.validate()?;
    if data.len() < 2 {
        return Err(ForgeError::Contract("policy training needs at least two tuples".into()));
    }
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr), &policy.parameters());
    let mut rng = stream(seed, "policy/batches");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut first: Option<f64> = None;
    let n_params = policy.parameters().len();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut bc, mut fd, mut reg, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let b = data.select(chunk);
            let mut tape = Tape::new();
            let params = policy.bind(&mut tape, true);
            let nodes = imitation_loss_tape(&mut tape, &policy, &params, frozen, &b, config)?;
            let w = chunk.len() as f64;
            bc += tape.scalar(nodes.bc) * w;
            fd += tape.scalar(nodes.fd) * w;
            reg += tape.scalar(nodes.reg) * w;
            seen += chunk.len();
            let mut g = tape.backward(nodes.total)?.collect(&params);
            // the log-std does not enter the loss; keep it where it is
            g[n_params - 1].fill(0.0);
            clip_grad_norm(&mut g, 10.0);
            opt.step(policy.parameters_mut(), &g)?;
        }
        let n = seen.max(1) as f64;
        let loss = ImitationLossReport::from_parts(bc / n, fd / n, reg / n);
        let base = *first.get_or_insert(loss.total.abs().max(1e-12));
        if !loss.total.is_finite() || loss.total > 10.0 * base {
            return Err(ForgeError::Divergence(format!(
                "policy loss {} at epoch {epoch} (first epoch {base})",
                loss.total
            )));
        }
        curve.push(PolicyEpoch { epoch, loss });
    }
    Ok((policy, curve))
}

/// Source of actor frames for online synthesis. The rollout pulls exactly
/// one frame per control tick (plus the two needed to start) and reports
/// each finished tick, so an implementation can verify it is never asked
/// to reveal more than one frame ahead.
pub trait ActorStream {
    fn next_frame(&mut self) -> Option<CharacterState>;

    fn tick_completed(&mut self) {}
}

/// Replays a recorded actor track.
pub struct ReplayStream {
    frames: std::vec::IntoIter<CharacterState>,
}

impl ReplayStream {
    pub fn new(frames: Vec<CharacterState>) -> Self {
        Self {
            frames: frames.into_iter(),
        }
    }
}

impl ActorStream for ReplayStream {
    fn next_frame(&mut self) -> Option<CharacterState> {
        self.frames.next()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutEnd {
    /// The stream ran dry; the motion is truncated at the last full tick.
    StreamEnd,
    TickLimit,
    /// The simulator produced a non-finite state.
    Blowup,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub ticks: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let pick = |q: f64| s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        Self {
            ticks: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: pick(0.5),
            p99_ms: pick(0.99),
            max_ms: *s.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    /// Actor frames consumed, aligned with `reactor`.
    pub actor: MotionSequence,
    pub reactor: MotionSequence,
    pub actions: Vec<Action>,
    pub latency_ms: Vec<f64>,
    pub end: RolloutEnd,
}

impl RolloutOutput {
    pub fn latency(&self) -> LatencyStats {
        LatencyStats::from_samples(&self.latency_ms)
    }
}

/// Closed-loop reaction synthesis. At tick `t` the policy sees
/// `(actor_t, reactor_t, actor_{t+1})`; the reactor then advances one
/// control step with `actor_{t+1}`'s capsules as rigid obstacles.
#[allow(clippy::too_many_arguments)]
pub fn rollout_online(
    spec: &CharacterSpec,
    policy: &ReactionPolicy,
    actor_stream: &mut dyn ActorStream,
    reactor_init: CharacterState,
    mode: SampleMode,
    rng: &mut Rng,
    max_ticks: Option<usize>,
    fps: f64,
) -> Result<RolloutOutput> {
    let mut sim = Simulator::new(spec.clone())?;
    let mut actor = Vec::new();
    let mut reactor = vec![reactor_init];
    let mut actions = Vec::new();
    let mut latency_ms = Vec::new();
    let end;
    match actor_stream.next_frame() {
        Some(f) => actor.push(f),
        None => {
            return Ok(RolloutOutput {
                actor: MotionSequence {
                    fps,
                    family: String::new(),
                    states: Vec::new(),
                },
                reactor: MotionSequence {
                    fps,
                    family: String::new(),
                    states: Vec::new(),
                },
                actions,
                latency_ms,
                end: RolloutEnd::StreamEnd,
            })
        }
    }
    loop {
        if max_ticks.is_some_and(|m| latency_ms.len() >= m) {
            end = RolloutEnd::TickLimit;
            break;
        }
        let Some(next) = actor_stream.next_frame() else {
            end = RolloutEnd::StreamEnd;
            break;
        };
        let start = Instant::now();
        let cur = actor.last().unwrap();
        let r = reactor.last().unwrap();
        let obs = policy.observe(spec, cur, r, &next);
        let (target, _) = policy.act(spec, &obs, r, rng, mode)?;
        let obstacles = capsules(spec, &next);
        let stepped = sim.step_pd(r, &target, &obstacles);
        latency_ms.push(start.elapsed().as_secs_f64() * 1e3);
        match stepped {
            Ok((s, _)) => {
                reactor.push(s);
                actor.push(next);
                actions.push(target);
                actor_stream.tick_completed();
            }
            Err(_) => {
                latency_ms.pop();
                end = RolloutEnd::Blowup;
                break;
            }
        }
    }
    let seq = |states| MotionSequence {
        fps,
        family: String::new(),
        states,
    };
    Ok(RolloutOutput {
        actor: seq(actor),
        reactor: seq(reactor),
        actions,
        latency_ms,
        end,
    })
}

/// Per-step cosine similarity of iterated forecasts to the true latents.
/// `similarity[0]` is the trivially exact starting point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRangeReport {
    pub horizon: usize,
    pub starts: usize,
    pub similarity: Vec<f64>,
}

/// Iterates `F` from the true latent at each start frame for `horizon`
/// steps, feeding back its own forecasts with the demonstrated action
/// latents, and averages cosine similarity per step.
pub fn long_range_eval(fdm: &ForwardDynamicsModel, tuples: &LatentTuples, horizon: usize, stride: usize) -> Result<LongRangeReport> {
    let mut similarity = vec![0.0; horizon + 1];
    let mut starts = 0usize;
    // runs of consecutive frames of one trajectory
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for i in 0..tuples.len() {
        let continues = i > 0 && tuples.origin[i].0 == tuples.origin[i - 1].0 && tuples.origin[i].1 == tuples.origin[i - 1].1 + 1;
        if continues {
            runs.last_mut().unwrap().1 += 1;
        } else {
            runs.push((i, 1));
        }
    }
    for &(first, len) in &runs {
        let mut t0 = 0;
        while t0 < len && t0 + horizon <= len {
            let mut z = tuples.current.row(first + t0).to_vec();
            similarity[0] += 1.0;
            for k in 0..horizon {
                let row = first + t0 + k;
                z = fdm.forward(&z, tuples.action.row(row).as_slice().unwrap())?;
                let truth = normalize(tuples.next.row(row).as_slice().unwrap());
                similarity[k + 1] += z.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>();
            }
            starts += 1;
            t0 += stride.max(1);
        }
    }
    if starts > 0 {
        for s in &mut similarity {
            *s /= starts as f64;
        }
    } else {
        similarity[0] = 1.0;
    }
    Ok(LongRangeReport {
        horizon,
        starts,
        similarity,
    })
}
