//! Iterative generalist-specialist learning: cluster the demonstrations in
//! state-latent space, fine-tune one specialist per cluster, distill the
//! specialists back into the generalist, repeat.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng as _;
use rayon::prelude::*;
use reaction_forge_nn::{derive_seed, stream, SampleMode};
use reaction_forge_sim::{capsules, Action, CharacterSpec, Simulator};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::features::state_features;
use crate::imitation::{
    evaluate_losses, imitation_data_from_steps, rollout_online, train_policy, FrozenModels, ImitationData,
    PolicyConfig, ReactionPolicy, ReactorStep, ReplayStream,
};
use crate::representation::Vae;
use crate::tracker::Demo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillMode {
    /// Demo actions are replaced by the owning specialist's mean action.
    Relabel,
    /// The generalist rolls out, specialists label the visited states, and
    /// those states join the relabeled demos.
    Dagger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IgslConfig {
    pub k: usize,
    pub specialist_epochs: usize,
    pub distill_epochs: usize,
    pub outer: usize,
    pub mode: DistillMode,
    pub pooling: Pooling,
}

impl Default for IgslConfig {
    fn default() -> Self {
        Self {
            k: 10,
            specialist_epochs: 20,
            distill_epochs: 20,
            outer: 2,
            mode: DistillMode::Relabel,
            pooling: Pooling::Mean,
        }
    }
}

impl IgslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(ForgeError::Config("igsl.k must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// A partition of the demos into `k` clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.k];
        for &l in &self.labels {
            n[l] += 1;
        }
        n
    }
}

pub const KMEANS_MAX_ITERS: usize = 100;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from a k-means++ start, at most
/// [`KMEANS_MAX_ITERS`] iterations. An emptied cluster keeps its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(ForgeError::Config("k must be ≥ 1".into()));
    }
    if k > points.len() {
        return Err(ForgeError::Config(format!("k = {k} exceeds the {} trajectories", points.len())));
    }
    let mut rng = stream(seed, "kmeans/init");
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let next = match WeightedIndex::new(&d) {
            Ok(w) => w.sample(&mut rng),
            // every point already coincides with a centroid
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
    }
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let fresh: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if fresh == labels {
            break;
        }
        labels = fresh;
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(ClusterAssignment { k, labels, centroids })
}

/// Adjusted Rand index of two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |m: usize| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&m| c2(m)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = rows * cols / c2(n);
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// One vector per demo: the pooled state latents of its actor followed by
/// those of its reactor.
pub fn embed_demos(spec: &CharacterSpec, demos: &[Demo], state_vae: &Vae, pooling: Pooling) -> Result<Vec<Vec<f64>>> {
    demos
        .par_iter()
        .map(|d| {
            let mut out = Vec::new();
            for traj in [&d.actor, &d.reactor] {
                let feats: Vec<Vec<f64>> = traj.states.iter().map(|s| state_features(spec, s)).collect();
                let z = state_vae.encode_batch(&crate::batch::rows(&feats))?;
                let pooled: Vec<f64> = z
                    .columns()
                    .into_iter()
                    .map(|c| match pooling {
                        Pooling::Mean => c.mean().unwrap_or(0.0),
                        Pooling::Max => c.fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
                    })
                    .collect();
                out.extend(pooled);
            }
            Ok(out)
        })
        .collect()
}

pub fn embed_and_cluster(
    spec: &CharacterSpec,
    demos: &[Demo],
    state_vae: &Vae,
    k: usize,
    pooling: Pooling,
    seed: u64,
) -> Result<ClusterAssignment> {
    if k > demos.len() {
        return Err(ForgeError::Config(format!("k = {k} exceeds the {} demos", demos.len())));
    }
    let points = embed_demos(spec, demos, state_vae, pooling)?;
    kmeans(&points, k, seed)
}

/// A copy of the generalist fine-tuned on `subset` alone.
pub fn specialize(
    generalist: &ReactionPolicy,
    subset: &ImitationData,
    frozen: &FrozenModels,
    config: &PolicyConfig,
    epochs: usize,
    seed: u64,
) -> Result<ReactionPolicy> {
    let config = PolicyConfig {
        epochs,
        ..config.clone()
    };
    Ok(train_policy(generalist.clone(), subset, frozen, &config, seed)?.0)
}

/// Demo rows relabeled with the mean action of the specialist owning each
/// row's demo. `labels` maps demo index to cluster; a cluster without a
/// specialist keeps its demonstrated actions.
pub fn relabel(
    spec: &CharacterSpec,
    data: &ImitationData,
    specialists: &[Option<ReactionPolicy>],
    labels: &[usize],
    action_vae: &Vae,
) -> Result<ImitationData> {
    let mut actions = data.actions.clone();
    for (c, sp) in specialists.iter().enumerate() {
        let Some(sp) = sp else { continue };
        let idx: Vec<usize> = (0..data.len()).filter(|&i| labels[data.origin[i].0] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let part = data.select(&idx);
        let targets = sp.mean_targets(spec, &part.features, &part.base)?;
        for (r, &i) in idx.iter().enumerate() {
            actions.row_mut(i).assign(&targets.row(r));
        }
    }
    let mut out = data.clone();
    out.relabel(actions, action_vae)?;
    Ok(out)
}

/// States visited by the generalist on each demo's actor track, labeled by
/// the demo's specialist. The next state is the one the specialist's action
/// leads to from the visited state.
#[allow(clippy::too_many_arguments)]
pub fn dagger_data(
    spec: &CharacterSpec,
    generalist: &ReactionPolicy,
    specialists: &[Option<ReactionPolicy>],
    demos: &[Demo],
    labels: &[usize],
    state_vae: &Vae,
    action_vae: &Vae,
) -> Result<ImitationData> {
    let visited: Vec<Vec<_>> = demos
        .par_iter()
        .enumerate()
        .map(|(d, demo)| -> Result<Vec<_>> {
            let Some(sp) = &specialists[labels[d]] else {
                return Ok(Vec::new());
            };
            let mut rng = stream(0, "igsl/dagger");
            let out = rollout_online(
                spec,
                generalist,
                &mut ReplayStream::new(demo.actor.states.clone()),
                demo.reactor.states[0].clone(),
                SampleMode::Deterministic,
                &mut rng,
                None,
                30.0,
            )?;
            let mut sim = Simulator::new(spec.clone())?;
            let mut steps = Vec::new();
            for t in 0..out.actions.len() {
                let (a, a1, r) = (&out.actor.states[t], &out.actor.states[t + 1], &out.reactor.states[t]);
                let obs = sp.observe(spec, a, r, a1);
                let residual = sp.head.mean_action(&obs)?;
                let label = Action(r.q.iter().zip(&residual).map(|(q, x)| q + x).collect()).clamped(spec);
                if let Ok((next, _)) = sim.step_pd(r, &label, &capsules(spec, a1)) {
                    steps.push((a.clone(), a1.clone(), r.clone(), label, next, (d, t)));
                }
            }
            Ok(steps)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<_> = visited.into_iter().flatten().collect();
    let steps: Vec<ReactorStep> = flat
        .iter()
        .map(|(a, a1, r, label, next, origin)| ReactorStep {
            actor: a,
            actor_next: a1,
            reactor: r,
            action: &label.0,
            reactor_next: next,
            origin: *origin,
        })
        .collect();
    imitation_data_from_steps(spec, &steps, state_vae, action_vae)
}

/// Continues training the generalist on specialist-labeled data.
#[allow(clippy::too_many_arguments)]
pub fn distill(
    spec: &CharacterSpec,
    generalist: &ReactionPolicy,
    specialists: &[Option<ReactionPolicy>],
    demos: &[Demo],
    data: &ImitationData,
    assignment: &ClusterAssignment,
    models: &IgslModels,
    config: &IgslConfig,
    policy: &PolicyConfig,
    seed: u64,
) -> Result<ReactionPolicy> {
    let mut train = relabel(spec, data, specialists, &assignment.labels, models.action_vae)?;
    if config.mode == DistillMode::Dagger {
        let extra = dagger_data(
            spec,
            generalist,
            specialists,
            demos,
            &assignment.labels,
            models.state_vae,
            models.action_vae,
        )?;
        if !extra.is_empty() {
            train = ImitationData::concat(&[&train, &extra]);
        }
    }
    let policy = PolicyConfig {
        epochs: config.distill_epochs,
        ..policy.clone()
    };
    Ok(train_policy(generalist.clone(), &train, models.frozen, &policy, seed)?.0)
}

/// The frozen models IGSL needs.
#[derive(Clone, Copy)]
pub struct IgslModels<'a> {
    pub state_vae: &'a Vae,
    pub action_vae: &'a Vae,
    pub frozen: &'a FrozenModels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub iteration: usize,
    pub cluster: usize,
    pub demos: usize,
    pub subset_loss_before: Option<f64>,
    pub subset_loss_after: Option<f64>,
    pub heldout_loss: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgslIteration {
    pub iteration: usize,
    pub heldout_before: f64,
    pub heldout_after: f64,
    pub accepted: bool,
    pub clusters: Vec<ClusterRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgslReport {
    pub initial_heldout: f64,
    pub final_heldout: f64,
    pub iterations: Vec<IgslIteration>,
}

impl IgslReport {
    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for it in &self.iterations {
            for row in &it.clusters {
                out.serialize(row).map_err(|e| ForgeError::Io(e.into()))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn subset_loss(policy: &ReactionPolicy, frozen: &FrozenModels, subset: &ImitationData, config: &PolicyConfig) -> Option<f64> {
    (subset.len() >= 2)
        .then(|| evaluate_losses(policy, frozen, subset, config).ok())
        .flatten()
        .map(|l| l.total)
}

/// Runs `config.outer` rounds of cluster → specialize → distill. A round is
/// kept only if it does not raise the held-out loss.
#[allow(clippy::too_many_arguments)]
pub fn igsl_loop(
    spec: &CharacterSpec,
    generalist: ReactionPolicy,
    demos: &[Demo],
    train: &ImitationData,
    heldout: &ImitationData,
    models: IgslModels,
    config: &IgslConfig,
    policy: &PolicyConfig,
    seed: u64,
) -> Result<(ReactionPolicy, IgslReport)> {
    config.validate()?;
    policy.validate()?;
    let eval = |p: &ReactionPolicy| evaluate_losses(p, models.frozen, heldout, policy).map(|l| l.total);
    let mut best = generalist;
    let mut best_loss = eval(&best)?;
    let initial = best_loss;
    let mut iterations = Vec::with_capacity(config.outer);
    if config.outer == 0 {
        return Ok((
            best,
            IgslReport {
                initial_heldout: initial,
                final_heldout: initial,
                iterations,
            },
        ));
    }
    let assignment = embed_and_cluster(spec, demos, models.state_vae, config.k, config.pooling, derive_seed(seed, "igsl/cluster"))
        .map_err(|e| e.in_stage("igsl/cluster"))?;
    for iteration in 0..config.outer {
        let subsets: Vec<ImitationData> = (0..config.k)
            .map(|c| train.filter(|d| assignment.labels[d] == c))
            .collect();
        let trained: Vec<(Option<ReactionPolicy>, Option<f64>, Option<f64>)> = subsets
            .par_iter()
            .enumerate()
            .map(|(c, subset)| -> Result<_> {
                if subset.len() < 2 {
                    eprintln!("warning: igsl cluster {c} has no training tuples; skipped");
                    return Ok((None, None, None));
                }
                let before = subset_loss(&best, models.frozen, subset, policy);
                let sp = specialize(
                    &best,
                    subset,
                    models.frozen,
                    policy,
                    config.specialist_epochs,
                    derive_seed(seed, &format!("igsl/{iteration}/specialist/{c}")),
                )?;
                let after = subset_loss(&sp, models.frozen, subset, policy);
                Ok((Some(sp), before, after))
            })
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("igsl/specialize"))?;
        let specialists: Vec<Option<ReactionPolicy>> = trained.iter().map(|t| t.0.clone()).collect();
        let candidate = distill(
            spec,
            &best,
            &specialists,
            demos,
            train,
            &assignment,
            &models,
            config,
            policy,
            derive_seed(seed, &format!("igsl/{iteration}/distill")),
        )
        .map_err(|e| e.in_stage("igsl/distill"))?;
        let loss = eval(&candidate)?;
        let accepted = loss <= best_loss;
        let sizes = assignment.sizes();
        let clusters = trained
            .iter()
            .enumerate()
            .map(|(c, t)| ClusterRow {
                iteration,
                cluster: c,
                demos: sizes[c],
                subset_loss_before: t.1,
                subset_loss_after: t.2,
                heldout_loss: loss,
                accepted,
            })
            .collect();
        iterations.push(IgslIteration {
            iteration,
            heldout_before: best_loss,
            heldout_after: loss,
            accepted,
            clusters,
        });
        if accepted {
            best = candidate;
            best_loss = loss;
        }
    }
    Ok((
        best,
        IgslReport {
            initial_heldout: initial,
            final_heldout: best_loss,
            iterations,
        },
    ))
}
