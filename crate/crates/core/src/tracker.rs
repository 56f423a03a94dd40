//! Demonstration generation: a goal-conditioned tracking policy trained with
//! PPO inside the simulator, and the retry-and-curate loop that turns
//! kinematic references into state-action demonstrations.
//!
//! The policy outputs a residual on top of the next reference joint angles;
//! the PD target sent to the simulator is `clamp(q̂_{t+1} + residual)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use reaction_forge_nn::{
    derive_seed, rng_from_seed, stream, Activation, Adam, AdamConfig, Checkpoint, GaussianHead, Mlp, Module,
    OutputActivation, Rng, SampleMode,
};
use reaction_forge_sim::{keypoints, Action, CharacterSpec, CharacterState, Simulator};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::features::{tracker_feature_len, tracker_features, Standardizer};
use crate::motion::{save_motion, InteractionPair, MotionSequence};
use crate::ppo::{ppo_update, PpoConfig, PpoStats, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub w_p: f64,
    pub w_v: f64,
    pub alpha_p: f64,
    pub alpha_v: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_p: 0.7,
            w_v: 0.3,
            alpha_p: 5.0,
            alpha_v: 0.1,
        }
    }
}

/// `w_p·exp(−α_p Σ‖p̂ − p‖²) + w_v·exp(−α_v Σ‖ṗ̂ − ṗ‖²)` over all keypoints.
pub fn imitation_reward(spec: &CharacterSpec, reference: &CharacterState, sim: &CharacterState, c: &RewardConfig) -> f64 {
    let (rp, rv) = keypoints(spec, reference);
    let (sp, sv) = keypoints(spec, sim);
    let sq = |a: &[[f64; 2]], b: &[[f64; 2]]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2))
            .sum()
    };
    c.w_p * (-c.alpha_p * sq(&rp, &sp)).exp() + c.w_v * (-c.alpha_v * sq(&rv, &sv)).exp()
}

/// Mean keypoint distance between two poses (m).
pub fn keypoint_error(spec: &CharacterSpec, a: &CharacterState, b: &CharacterState) -> f64 {
    let (pa, _) = keypoints(spec, a);
    let (pb, _) = keypoints(spec, b);
    pa.iter()
        .zip(&pb)
        .map(|(x, y)| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt())
        .sum::<f64>()
        / pa.len() as f64
}

fn root_distance(a: &CharacterState, b: &CharacterState) -> f64 {
    ((a.root_pos[0] - b.root_pos[0]).powi(2) + (a.root_pos[1] - b.root_pos[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// PPO iterations (collect `ppo.horizon` steps, then update).
    pub iterations: usize,
    /// Leading iterations that fit only the value function.
    pub value_warmup: usize,
    pub episode_len: usize,
    /// Training episodes end once the mean keypoint error exceeds this (m).
    pub terminate_error: f64,
    pub retries: usize,
    /// Success needs a mean keypoint error below this (m) ...
    pub success_error: f64,
    /// ... and a root drift that never exceeds this (m).
    pub success_drift: f64,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            init_log_std: (0.05f64).ln(),
            iterations: 30,
            value_warmup: 3,
            episode_len: 90,
            terminate_error: 0.5,
            retries: 10,
            success_error: 0.10,
            success_drift: 0.5,
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerPolicy {
    pub head: GaussianHead,
    pub value: Mlp,
    pub input: Standardizer,
}

impl TrackerPolicy {
    pub fn new(spec: &CharacterSpec, hidden: &[usize], init_log_std: f64, input: Standardizer, rng: &mut Rng) -> Self {
        let d = tracker_feature_len(spec);
        let mut sizes = vec![d];
        sizes.extend_from_slice(hidden);
        let mut ps = sizes.clone();
        ps.push(spec.num_joints());
        let mut mean = Mlp::new(&ps, Activation::Tanh, OutputActivation::Identity, rng);
        mean.scale_output_layer(0.01);
        let mut vs = sizes;
        vs.push(1);
        Self {
            head: GaussianHead::new(mean, init_log_std),
            value: Mlp::new(&vs, Activation::Tanh, OutputActivation::Identity, rng),
            input,
        }
    }

    pub fn observe(&self, spec: &CharacterSpec, sim: &CharacterState, reference_next: &CharacterState) -> Vec<f64> {
        self.input.apply(&tracker_features(spec, sim, reference_next))
    }

    /// `(clamped PD target, residual, log-prob of the residual)`.
    pub fn act(
        &self,
        spec: &CharacterSpec,
        obs: &[f64],
        reference_next: &CharacterState,
        rng: &mut Rng,
        mode: SampleMode,
    ) -> Result<(Action, Vec<f64>, f64)> {
        let (residual, lp) = self.head.sample(obs, rng, mode)?;
        let target = Action(reference_next.q.iter().zip(&residual).map(|(q, r)| q + r).collect()).clamped(spec);
        Ok((target, residual, lp))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        self.head.write_to(&mut c, "tracker.policy");
        self.value.write_to(&mut c, "tracker.value");
        self.input.write_to(&mut c, "tracker.input");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Ok(Self {
            head: GaussianHead::read_from(c, "tracker.policy")?,
            value: Mlp::read_from(c, "tracker.value")?,
            input: Standardizer::read_from(c, "tracker.input")?,
        })
    }
}

/// Per-iteration training diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct TrackerIteration {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_episode_len: f64,
    pub ppo: PpoStats,
}

fn references(corpus: &[InteractionPair]) -> Vec<&MotionSequence> {
    corpus.iter().flat_map(|p| [&p.actor, &p.reactor]).filter(|s| s.len() >= 2).collect()
}

pub fn fit_tracker_input(spec: &CharacterSpec, corpus: &[InteractionPair]) -> Standardizer {
    let rows: Vec<Vec<f64>> = references(corpus)
        .iter()
        .flat_map(|seq| seq.states.windows(2).map(|w| tracker_features(spec, &w[0], &w[1])))
        .collect();
    Standardizer::fit(rows.iter().map(|r| r.as_slice()), tracker_feature_len(spec))
}

/// Trains the unified tracker on every track of `corpus` with
/// reference-state initialization and early termination.
pub fn train_tracker(
    spec: &CharacterSpec,
    corpus: &[InteractionPair],
    config: &TrackerConfig,
    seed: u64,
) -> Result<(TrackerPolicy, Vec<TrackerIteration>)> {
    config.ppo.validate()?;
    let refs = references(corpus);
    if refs.is_empty() {
        return Err(ForgeError::Contract("tracker training needs at least one reference clip".into()));
    }
    let mut init = stream(seed, "tracker/init");
    let mut policy = TrackerPolicy::new(spec, &config.hidden, config.init_log_std, fit_tracker_input(spec, corpus), &mut init);
    let mut popt = Adam::new(AdamConfig::with_lr(config.ppo.lr), &policy.head.parameters());
    let mut vopt = Adam::new(AdamConfig::with_lr(config.ppo.value_lr), &policy.value.parameters());
    let mut shuffle = stream(seed, "tracker/minibatch");
    let mut log = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let mut rng = rng_from_seed(derive_seed(seed, &format!("tracker/rollout/{it}")));
        let (steps, episodes) = collect(spec, &policy, &refs, config, &mut rng)?;
        let mean_reward = steps.iter().map(|s| s.reward).sum::<f64>() / steps.len() as f64 / (1.0 - config.ppo.gamma);
        let saved = (policy.head.clone(), popt.clone());
        let stats = ppo_update(
            &mut policy.head,
            &mut policy.value,
            &mut popt,
            &mut vopt,
            &steps,
            &config.ppo,
            &mut shuffle,
        )?;
        if it < config.value_warmup {
            (policy.head, popt) = saved;
        }
        log.push(TrackerIteration {
            iteration: it,
            mean_reward,
            mean_episode_len: steps.len() as f64 / episodes as f64,
            ppo: stats,
        });
    }
    Ok((policy, log))
}

fn collect(
    spec: &CharacterSpec,
    policy: &TrackerPolicy,
    refs: &[&MotionSequence],
    config: &TrackerConfig,
    rng: &mut Rng,
) -> Result<(Vec<Transition>, usize)> {
    let mut steps: Vec<Transition> = Vec::with_capacity(config.ppo.horizon + config.episode_len);
    let mut episodes = 0;
    let mut sim = Simulator::new(spec.clone())?;
    while steps.len() < config.ppo.horizon {
        episodes += 1;
        let seq = refs[rng.random_range(0..refs.len())];
        let start = rng.random_range(0..seq.len() - 1);
        let end = (start + config.episode_len).min(seq.len() - 1);
        let mut state = seq.states[start].clone();
        for t in start..end {
            let reference = &seq.states[t + 1];
            let obs = policy.observe(spec, &state, reference);
            let value = policy.value.forward(&obs)?[0];
            let (target, residual, log_prob) = policy.act(spec, &obs, reference, rng, SampleMode::Stochastic)?;
            let (next, failed) = match sim.step_pd(&state, &target, &[]) {
                Ok((s, _)) => (s, false),
                Err(_) => (state.clone(), true),
            };
            // scaled so discounted returns stay of order one
            let reward = if failed {
                0.0
            } else {
                (1.0 - config.ppo.gamma) * imitation_reward(spec, reference, &next, &config.reward)
            };
            let terminal = failed || keypoint_error(spec, &next, reference) > config.terminate_error;
            let last = t + 1 == end;
            let next_value = if terminal || t + 2 >= seq.len() {
                0.0
            } else if last {
                policy.value.forward(&policy.observe(spec, &next, &seq.states[t + 2]))?[0]
            } else {
                f64::NAN
            };
            steps.push(Transition {
                obs,
                action: residual,
                log_prob,
                reward,
                value,
                next_value,
                end: terminal || last,
            });
            if terminal {
                break;
            }
            state = next;
        }
    }
    // interior steps bootstrap from the value recorded at the following step
    for i in 0..steps.len() {
        if steps[i].next_value.is_nan() {
            steps[i].next_value = steps[i + 1].value;
        }
    }
    Ok((steps, episodes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Actor,
    Reactor,
}

/// A simulated state-action sequence: `actions[t]` drove `states[t]` to
/// `states[t + 1]`, so there is one action fewer than states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<CharacterState>,
    pub actions: Vec<Action>,
    pub fps: f64,
    pub source: usize,
    pub role: Role,
    pub mean_error: f64,
    pub max_drift: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Largest keypoint deviation (m) between the recorded states and an
/// open-loop replay of the recorded actions from the first state.
pub fn replay_error(spec: &CharacterSpec, traj: &Trajectory) -> Result<f64> {
    let mut sim = Simulator::new(spec.clone())?;
    let mut s = traj.states[0].clone();
    let mut worst: f64 = 0.0;
    for (t, a) in traj.actions.iter().enumerate() {
        s = sim.step_pd(&s, a, &[])?.0;
        let (p, _) = keypoints(spec, &s);
        let (r, _) = keypoints(spec, &traj.states[t + 1]);
        for (x, y) in p.iter().zip(&r) {
            worst = worst.max(((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub attempt: usize,
    /// False when the attempt was cut short (drift limit exceeded or the
    /// simulation failed); errors then cover the simulated prefix only.
    pub completed: bool,
    pub mean_error: f64,
    pub max_drift: f64,
    /// `max(mean_error / success_error, max_drift / success_drift)`, at least 1
    /// for incomplete attempts; below 1 is a success.
    pub score: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutcome {
    pub trajectory: Option<Trajectory>,
    pub attempts: Vec<Attempt>,
}

/// Closed-loop attempts at one reference. Attempt 0 uses the policy mean,
/// later attempts sample with fresh noise. Stops at the first success, so the
/// returned attempt scores no worse than every discarded one.
pub fn track_sequence(
    spec: &CharacterSpec,
    policy: &TrackerPolicy,
    reference: &MotionSequence,
    source: usize,
    role: Role,
    config: &TrackerConfig,
    seed: u64,
) -> Result<TrackOutcome> {
    let mut attempts = Vec::new();
    if reference.len() < 2 {
        return Ok(TrackOutcome {
            trajectory: None,
            attempts,
        });
    }
    for k in 0..config.retries.max(1) {
        let mut rng = rng_from_seed(derive_seed(seed, &format!("attempt/{k}")));
        let mode = if k == 0 {
            SampleMode::Deterministic
        } else {
            SampleMode::Stochastic
        };
        let mut sim = Simulator::new(spec.clone())?;
        let mut states = vec![reference.states[0].clone()];
        let mut actions = Vec::with_capacity(reference.len() - 1);
        let mut err_sum = 0.0;
        let mut drift: f64 = 0.0;
        let mut broke = false;
        for t in 0..reference.len() - 1 {
            let next_ref = &reference.states[t + 1];
            let s = states.last().unwrap();
            let obs = policy.observe(spec, s, next_ref);
            let (target, _, _) = policy.act(spec, &obs, next_ref, &mut rng, mode)?;
            let Ok((next, _)) = sim.step_pd(s, &target, &[]) else {
                broke = true;
                break;
            };
            err_sum += keypoint_error(spec, &next, next_ref);
            drift = drift.max(root_distance(&next, next_ref));
            states.push(next);
            actions.push(target);
            if drift > config.success_drift {
                broke = true;
                break;
            }
        }
        let mean_error = err_sum / (states.len() - 1).max(1) as f64;
        let mut score = (mean_error / config.success_error).max(drift / config.success_drift);
        if broke {
            score = score.max(1.0);
        }
        let success = score < 1.0;
        attempts.push(Attempt {
            attempt: k,
            completed: !broke,
            mean_error,
            max_drift: drift,
            score,
            success,
        });
        if success {
            return Ok(TrackOutcome {
                trajectory: Some(Trajectory {
                    states,
                    actions,
                    fps: reference.fps,
                    source,
                    role,
                    mean_error,
                    max_drift: drift,
                }),
                attempts,
            });
        }
    }
    Ok(TrackOutcome {
        trajectory: None,
        attempts,
    })
}

/// Both characters of one interaction, tracked successfully.
#[derive(Debug, Clone, PartialEq)]
pub struct Demo {
    pub id: usize,
    pub family: String,
    pub actor: Trajectory,
    pub reactor: Trajectory,
}

impl Demo {
    pub fn len(&self) -> usize {
        self.actor.len().min(self.reactor.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyTally {
    pub pairs: usize,
    pub succeeded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLog {
    pub id: usize,
    pub family: String,
    pub actor: Vec<Attempt>,
    pub reactor: Vec<Attempt>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub criterion: String,
    pub pairs: usize,
    pub accepted: usize,
    pub success_rate: f64,
    pub per_family: BTreeMap<String, FamilyTally>,
    pub log: Vec<PairLog>,
}

/// Tracks both characters of every pair; a pair becomes a demonstration only
/// if both succeed.
pub fn curate(
    spec: &CharacterSpec,
    policy: &TrackerPolicy,
    corpus: &[InteractionPair],
    config: &TrackerConfig,
    seed: u64,
) -> Result<(Vec<Demo>, CurationReport)> {
    let results: Vec<Result<(Option<Demo>, PairLog)>> = corpus
        .par_iter()
        .map(|p| {
            let a = track_sequence(spec, policy, &p.actor, p.id, Role::Actor, config, derive_seed(seed, &format!("curate/{}/actor", p.id)))?;
            let r = track_sequence(spec, policy, &p.reactor, p.id, Role::Reactor, config, derive_seed(seed, &format!("curate/{}/reactor", p.id)))?;
            let log = PairLog {
                id: p.id,
                family: p.family().to_string(),
                actor: a.attempts,
                reactor: r.attempts,
                accepted: a.trajectory.is_some() && r.trajectory.is_some(),
            };
            let demo = match (a.trajectory, r.trajectory) {
                (Some(actor), Some(reactor)) => Some(Demo {
                    id: p.id,
                    family: p.family().to_string(),
                    actor,
                    reactor,
                }),
                _ => None,
            };
            Ok((demo, log))
        })
        .collect();
    let mut demos = Vec::new();
    let mut log = Vec::with_capacity(corpus.len());
    let mut per_family: BTreeMap<String, FamilyTally> = BTreeMap::new();
    for r in results {
        let (demo, entry) = r?;
        let tally = per_family.entry(entry.family.clone()).or_default();
        tally.pairs += 1;
        tally.succeeded += entry.accepted as usize;
        log.push(entry);
        demos.extend(demo);
    }
    let accepted = demos.len();
    let report = CurationReport {
        criterion: format!(
            "automated stand-in for manual review: mean keypoint error < {} m and root drift < {} m, best of {} attempts",
            config.success_error, config.success_drift, config.retries
        ),
        pairs: corpus.len(),
        accepted,
        success_rate: if corpus.is_empty() { 0.0 } else { accepted as f64 / corpus.len() as f64 },
        per_family,
        log,
    };
    if demos.is_empty() {
        return Err(ForgeError::EmptyDemoSet);
    }
    Ok((demos, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DemoEntry {
    id: usize,
    family: String,
    fps: f64,
    actor: [f64; 2],
    reactor: [f64; 2],
}

const DEMO_INDEX: &str = "demos.json";
const DEMO_SIDECAR: &str = "demos.rfck";

fn push_trajectory(c: &mut Checkpoint, prefix: &str, t: &Trajectory) {
    let flat: Vec<f64> = t.states.iter().flat_map(|s| s.to_vec()).collect();
    let width = CharacterState::flat_len(t.states[0].q.len());
    c.push(&format!("{prefix}.states"), vec![t.states.len(), width], flat);
    let j = t.states[0].q.len();
    let acts: Vec<f64> = t.actions.iter().flat_map(|a| a.0.iter().copied()).collect();
    c.push(&format!("{prefix}.actions"), vec![t.actions.len(), j], acts);
}

fn read_trajectory(c: &Checkpoint, prefix: &str, source: usize, role: Role, fps: f64, stats: [f64; 2]) -> Result<Trajectory> {
    let st = c
        .get(&format!("{prefix}.states"))
        .ok_or_else(|| ForgeError::Contract(format!("missing {prefix}.states")))?;
    let ac = c
        .get(&format!("{prefix}.actions"))
        .ok_or_else(|| ForgeError::Contract(format!("missing {prefix}.actions")))?;
    let width = st.dims[1];
    let j = (width - 6) / 2;
    let states = st.data.chunks(width).map(|r| CharacterState::from_slice(r, j)).collect();
    let actions = if ac.dims[1] == 0 {
        vec![Action(vec![]); ac.dims[0]]
    } else {
        ac.data.chunks(ac.dims[1]).map(|r| Action(r.to_vec())).collect()
    };
    Ok(Trajectory {
        states,
        actions,
        fps,
        source,
        role,
        mean_error: stats[0],
        max_drift: stats[1],
    })
}

/// Writes each demo as a motion clip for inspection, plus exact `f64`
/// states and actions in one checkpoint-format sidecar.
pub fn save_demos(dir: impl AsRef<Path>, demos: &[Demo]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut side = Checkpoint::new();
    let mut index = Vec::with_capacity(demos.len());
    for d in demos {
        let seq = |t: &Trajectory| MotionSequence {
            fps: t.fps,
            family: d.family.clone(),
            states: t.states.clone(),
        };
        let pair = InteractionPair::new(d.id, seq(&d.actor), seq(&d.reactor))?;
        save_motion(dir.join(format!("demo_{:05}.rfmo", d.id)), &pair)?;
        push_trajectory(&mut side, &format!("demo.{}.actor", d.id), &d.actor);
        push_trajectory(&mut side, &format!("demo.{}.reactor", d.id), &d.reactor);
        index.push(DemoEntry {
            id: d.id,
            family: d.family.clone(),
            fps: d.actor.fps,
            actor: [d.actor.mean_error, d.actor.max_drift],
            reactor: [d.reactor.mean_error, d.reactor.max_drift],
        });
    }
    side.save(dir.join(DEMO_SIDECAR))?;
    std::fs::write(dir.join(DEMO_INDEX), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn load_demos(dir: impl AsRef<Path>) -> Result<Vec<Demo>> {
    let dir = dir.as_ref();
    let index: Vec<DemoEntry> = serde_json::from_str(&std::fs::read_to_string(dir.join(DEMO_INDEX))?)?;
    let side = Checkpoint::load(dir.join(DEMO_SIDECAR))?;
    index
        .into_iter()
        .map(|e| {
            Ok(Demo {
                id: e.id,
                actor: read_trajectory(&side, &format!("demo.{}.actor", e.id), e.id, Role::Actor, e.fps, e.actor)?,
                reactor: read_trajectory(&side, &format!("demo.{}.reactor", e.id), e.id, Role::Reactor, e.fps, e.reactor)?,
                family: e.family,
            })
        })
        .collect()
}
