//! Motion-quality metrics: Fréchet distance and diversity of learned motion
//! features, ground distance, interpenetration, and the throughput bench.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use reaction_forge_nn::{
    clip_grad_norm, derive_seed, rng_from_seed, stream, Activation, Adam, AdamConfig, Checkpoint, Matrix, Mlp,
    Module, OutputActivation, SampleMode, Tape,
};
use reaction_forge_sim::{capsules, keypoints, min_separation, penetration_between, CharacterSpec, CharacterState, Simulator};
use serde::{Deserialize, Serialize};

use crate::batch::{gather, rows};
use crate::error::{ForgeError, Result};
use crate::features::Standardizer;
use crate::imitation::{rollout_online, LatencyStats, ReactionPolicy, ReplayStream, RolloutOutput};
use crate::motion::{InteractionPair, MotionSequence};

pub const REPORT_SCHEMA: u32 = 1;

/// Fréchet distance between Gaussian fits of two feature sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fvd {
    pub value: f64,
    /// `1e-6·I` was added to both covariances because one was singular.
    pub regularized: bool,
}

fn mean_cov(x: &Matrix) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mut mu = DVector::zeros(d);
    for r in x.rows() {
        for k in 0..d {
            mu[k] += r[k];
        }
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in x.rows() {
        let c = DVector::from_iterator(d, r.iter().zip(mu.iter()).map(|(a, m)| a - m));
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    (mu, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let s = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

fn is_singular(m: &DMatrix<f64>) -> bool {
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = e.iter().copied().fold(0.0, f64::max);
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    min <= 1e-10 * max.max(1.0)
}

/// `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁^{½} Σ₂ Σ₁^{½})^{½})`.
pub fn fvd(gen: &Matrix, real: &Matrix) -> Result<Fvd> {
    if gen.nrows() < 2 || real.nrows() < 2 {
        return Err(ForgeError::Contract("fvd needs at least two samples per set".into()));
    }
    if gen.ncols() != real.ncols() {
        return Err(ForgeError::Contract(format!(
            "fvd feature widths differ: {} vs {}",
            gen.ncols(),
            real.ncols()
        )));
    }
    let (m1, mut s1) = mean_cov(gen);
    let (m2, mut s2) = mean_cov(real);
    let regularized = is_singular(&s1) || is_singular(&s2);
    if regularized {
        let eye = DMatrix::<f64>::identity(s1.nrows(), s1.nrows()) * 1e-6;
        s1 += &eye;
        s2 += &eye;
    }
    let r1 = psd_sqrt(&s1);
    let mut inner = &r1 * &s2 * &r1;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum::<f64>();
    let value = (&m1 - &m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(Fvd {
        value: value.max(0.0),
        regularized,
    })
}

/// Mean Euclidean distance over all unordered pairs of rows.
pub fn diversity(features: &Matrix) -> Result<f64> {
    let n = features.nrows();
    if n < 2 {
        return Err(ForgeError::Contract("diversity needs at least two samples".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = &features.row(i) - &features.row(j);
            total += d.dot(&d).sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundDistanceConfig {
    pub velocity_threshold: f64,
    pub window: usize,
    /// Report `|mean float − mean penetration|` instead of their sum.
    pub paper_literal_gd: bool,
}

impl Default for GroundDistanceConfig {
    fn default() -> Self {
        Self {
            velocity_threshold: 0.1,
            window: 10,
            paper_literal_gd: false,
        }
    }
}

/// Lowest point of any capsule surface of a posed character.
pub fn lowest_point(spec: &CharacterSpec, s: &CharacterState) -> [f64; 2] {
    let mut best = [0.0, f64::INFINITY];
    for c in capsules(spec, s) {
        for p in [c.a, c.b] {
            let y = p[1] - c.radius;
            if y < best[1] {
                best = [p[0], y];
            }
        }
    }
    best
}

/// Ground distance in millimetres from per-frame lowest-point heights `h`
/// and speeds `v`. Frames inside a run of at least `window` consecutive
/// slow frames qualify; `None` when no frame does.
pub fn ground_distance_from(h: &[f64], v: &[f64], config: &GroundDistanceConfig) -> Option<f64> {
    let n = h.len().min(v.len());
    let mut qualifies = vec![false; n];
    let mut run_start = 0;
    for t in 0..=n {
        let slow = t < n && v[t] < config.velocity_threshold;
        if !slow {
            if t - run_start >= config.window.max(1) {
                qualifies[run_start..t].iter_mut().for_each(|q| *q = true);
            }
            run_start = t + 1;
        }
    }
    let picked: Vec<f64> = (0..n).filter(|&t| qualifies[t]).map(|t| h[t]).collect();
    if picked.is_empty() {
        return None;
    }
    let k = picked.len() as f64;
    let float = picked.iter().map(|y| y.max(0.0)).sum::<f64>() / k;
    let pen = picked.iter().map(|y| (-y).max(0.0)).sum::<f64>() / k;
    let gd = if config.paper_literal_gd {
        (float - pen).abs()
    } else {
        float + pen
    };
    Some(gd * 1e3)
}

pub fn ground_distance(spec: &CharacterSpec, motion: &MotionSequence, config: &GroundDistanceConfig) -> Option<f64> {
    let pts: Vec<[f64; 2]> = motion.states.iter().map(|s| lowest_point(spec, s)).collect();
    let h: Vec<f64> = pts.iter().map(|p| p[1]).collect();
    let mut v = vec![0.0; pts.len()];
    for t in 1..pts.len() {
        let d = [pts[t][0] - pts[t - 1][0], pts[t][1] - pts[t - 1][1]];
        v[t] = (d[0] * d[0] + d[1] * d[1]).sqrt() * motion.fps;
    }
    if pts.len() > 1 {
        v[0] = v[1];
    }
    ground_distance_from(&h, &v, config)
}

/// Interpenetration over the frames where the two bodies come within the gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interpenetration {
    /// Mean overlap area (m²) over gated frames.
    pub iv: f64,
    /// Mean deepest penetration (mm) over gated frames.
    pub id_mm: f64,
    pub gated_frames: usize,
    pub frames: usize,
}

pub const CONTACT_GATE: f64 = 2e-3;

pub fn interpenetration(
    spec: &CharacterSpec,
    actor: &[CharacterState],
    reactor: &[CharacterState],
    gate: f64,
) -> Result<Option<Interpenetration>> {
    if actor.len() != reactor.len() {
        return Err(ForgeError::Contract(format!(
            "interpenetration needs equal lengths, got {} and {}",
            actor.len(),
            reactor.len()
        )));
    }
    let (mut area, mut depth, mut gated) = (0.0, 0.0, 0usize);
    for (a, r) in actor.iter().zip(reactor) {
        let (ca, cr) = (capsules(spec, a), capsules(spec, r));
        if min_separation(&ca, &cr) < gate {
            let (ar, d) = penetration_between(&ca, &cr);
            area += ar;
            depth += d;
            gated += 1;
        }
    }
    if gated == 0 {
        return Ok(None);
    }
    Ok(Some(Interpenetration {
        iv: area / gated as f64,
        id_mm: depth / gated as f64 * 1e3,
        gated_frames: gated,
        frames: actor.len(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub window: usize,
    /// Every `frame_stride`-th frame of a window enters the encoder.
    pub frame_stride: usize,
    pub hidden: usize,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            window: 60,
            frame_stride: 3,
            hidden: 128,
            dim: 64,
            epochs: 60,
            lr: 1e-3,
            batch: 64,
        }
    }
}

/// Autoencoder over fixed-length keypoint windows; the bottleneck is the
/// metric feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeatureEncoder {
    pub window: usize,
    pub frame_stride: usize,
    pub input: Standardizer,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Keypoints of `states[start..start + window]` (every `stride`-th frame)
/// relative to the root position at `start`; short motions repeat their
/// last frame.
fn window_features(spec: &CharacterSpec, states: &[CharacterState], start: usize, window: usize, stride: usize) -> Vec<f64> {
    let origin = states[start].root_pos;
    let mut v = Vec::new();
    for k in (0..window).step_by(stride.max(1)) {
        let s = &states[(start + k).min(states.len() - 1)];
        for p in keypoints(spec, s).0 {
            v.push(p[0] - origin[0]);
            v.push(p[1] - origin[1]);
        }
    }
    v
}

fn window_starts(len: usize, window: usize, step: usize) -> Vec<usize> {
    if len <= window {
        return vec![0];
    }
    (0..=len - window).step_by(step.max(1)).collect()
}

impl MotionFeatureEncoder {
    pub fn dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Mean bottleneck code over windows starting every half window.
    pub fn features(&self, spec: &CharacterSpec, motion: &MotionSequence) -> Result<Vec<f64>> {
        if motion.is_empty() {
            return Err(ForgeError::Contract("cannot featurize an empty motion".into()));
        }
        let starts = window_starts(motion.len(), self.window, self.window / 2);
        let mut acc = vec![0.0; self.dim()];
        for &s in &starts {
            let x = window_features(spec, &motion.states, s, self.window, self.frame_stride);
            let z = self.encoder.forward(&self.input.apply(&x))?;
            acc.iter_mut().zip(&z).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= starts.len() as f64);
        Ok(acc)
    }

    pub fn features_batch(&self, spec: &CharacterSpec, motions: &[&MotionSequence]) -> Result<Matrix> {
        let f: Vec<Vec<f64>> = motions
            .par_iter()
            .map(|m| self.features(spec, m))
            .collect::<Result<_>>()?;
        Ok(rows(&f))
    }

    pub fn write_to(&self, c: &mut Checkpoint) {
        c.push_vector("motion_encoder.shape", &[self.window as f64, self.frame_stride as f64]);
        self.input.write_to(c, "motion_encoder.input");
        self.encoder.write_to(c, "motion_encoder.encoder");
        self.decoder.write_to(c, "motion_encoder.decoder");
    }

    pub fn read_from(c: &Checkpoint) -> Result<Self> {
        let shape = c.vector("motion_encoder.shape")?;
        if shape.len() != 2 {
            return Err(ForgeError::Contract("bad motion encoder shape record".into()));
        }
        Ok(Self {
            window: shape[0] as usize,
            frame_stride: shape[1] as usize,
            input: Standardizer::read_from(c, "motion_encoder.input")?,
            encoder: Mlp::read_from(c, "motion_encoder.encoder")?,
            decoder: Mlp::read_from(c, "motion_encoder.decoder")?,
        })
    }
}

/// Trains the metric encoder on ground-truth motions only.
pub fn train_motion_encoder(
    spec: &CharacterSpec,
    motions: &[&MotionSequence],
    config: &EncoderConfig,
    seed: u64,
) -> Result<(MotionFeatureEncoder, Vec<f64>)> {
    let windows: Vec<Vec<f64>> = motions
        .iter()
        .filter(|m| !m.is_empty())
        .flat_map(|m| {
            window_starts(m.len(), config.window, 10)
                .into_iter()
                .map(|s| window_features(spec, &m.states, s, config.window, config.frame_stride))
        })
        .collect();
    if windows.len() < 2 {
        return Err(ForgeError::Contract("motion encoder needs at least two windows".into()));
    }
    let d = windows[0].len();
    let input = Standardizer::fit(windows.iter().map(|w| w.as_slice()), d);
    let data = rows(&windows.iter().map(|w| input.apply(w)).collect::<Vec<_>>());
    let mut init = stream(seed, "motion_encoder/init");
    let mut enc = Mlp::new(&[d, config.hidden, config.dim], Activation::Tanh, OutputActivation::Identity, &mut init);
    let mut dec = Mlp::new(&[config.dim, config.hidden, d], Activation::Tanh, OutputActivation::Identity, &mut init);
    let mut params: Vec<&Matrix> = enc.parameters();
    params.extend(dec.parameters());
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr), &params);
    let n_enc = enc.parameters().len();
    let mut rng = stream(seed, "motion_encoder/batches");
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch) {
            let x = gather(&data, chunk);
            let mut tape = Tape::new();
            let pe = enc.bind(&mut tape, true);
            let pd = dec.bind(&mut tape, true);
            let xv = tape.constant(x);
            let z = enc.forward_tape(&mut tape, &pe, xv)?;
            let y = dec.forward_tape(&mut tape, &pd, z)?;
            let diff = tape.sub(y, xv)?;
            let sq = tape.square(diff);
            let loss = tape.mean(sq);
            total += tape.scalar(loss) * chunk.len() as f64;
            seen += chunk.len();
            let mut all = pe.clone();
            all.extend(pd);
            let mut g = tape.backward(loss)?.collect(&all);
            clip_grad_norm(&mut g, 10.0);
            let mut pm = enc.parameters_mut();
            pm.extend(dec.parameters_mut());
            opt.step(pm, &g)?;
        }
        let l = total / seen as f64;
        if !l.is_finite() {
            return Err(ForgeError::Divergence("motion encoder loss is not finite".into()));
        }
        curve.push(l);
    }
    debug_assert_eq!(n_enc, enc.parameters().len());
    Ok((
        MotionFeatureEncoder {
            window: config.window,
            frame_stride: config.frame_stride,
            input,
            encoder: enc,
            decoder: dec,
        },
        curve,
    ))
}

/// One repeat of generated samples.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub seed: u64,
    /// Index into the test set of each sample's actor stream.
    pub sources: Vec<usize>,
    pub rollouts: Vec<RolloutOutput>,
}

/// `repeats` independent sets of `n` closed-loop reactions to actor streams
/// drawn (with replacement) from `test`, each with its own seed.
pub fn sample_for_metrics(
    spec: &CharacterSpec,
    policy: &ReactionPolicy,
    test: &[InteractionPair],
    n: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<SampleSet>> {
    if test.is_empty() {
        return Err(ForgeError::Contract("no test streams to sample from".into()));
    }
    let mut sets = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let s = derive_seed(seed, &format!("metrics/repeat/{r}"));
        let mut rng = rng_from_seed(s);
        let sources: Vec<usize> = (0..n).map(|_| rng.random_range(0..test.len())).collect();
        let rollouts = sources
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let pair = &test[i];
                let mut stream = ReplayStream::new(pair.actor.states.clone());
                let mut rng = rng_from_seed(derive_seed(s, &format!("sample/{k}")));
                rollout_online(
                    spec,
                    policy,
                    &mut stream,
                    pair.reactor.states[0].clone(),
                    SampleMode::Stochastic,
                    &mut rng,
                    None,
                    pair.fps(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        sets.push(SampleSet {
            seed: s,
            sources,
            rollouts,
        });
    }
    Ok(sets)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(v: &[f64]) -> Self {
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatMetrics {
    pub seed: u64,
    pub fvd: f64,
    pub fvd_regularized: bool,
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: u32,
    pub samples_per_repeat: usize,
    pub repeats: Vec<RepeatMetrics>,
    pub fvd: Spread,
    pub diversity: Spread,
    /// Diversity of the ground-truth reactor features, for reference.
    pub real_diversity: f64,
    /// Mean over samples with a qualifying window; `None` if there were none.
    pub gd_mm: Option<f64>,
    pub gd_samples: usize,
    /// Pooled over gated frames of all samples; `None` if no frame was gated.
    pub iv: Option<f64>,
    pub id_mm: Option<f64>,
    pub gated_frames: usize,
    pub frames: usize,
    /// Rollouts that ended in a simulator blow-up.
    pub blowups: usize,
}

/// Scores sample sets against the test set's ground-truth reactors.
pub fn evaluate_samples(
    spec: &CharacterSpec,
    encoder: &MotionFeatureEncoder,
    test: &[InteractionPair],
    sets: &[SampleSet],
    gd: &GroundDistanceConfig,
) -> Result<MetricsReport> {
    let real = encoder.features_batch(spec, &test.iter().map(|p| &p.reactor).collect::<Vec<_>>())?;
    let mut repeats = Vec::with_capacity(sets.len());
    let (mut gd_sum, mut gd_n) = (0.0, 0usize);
    let (mut area, mut depth, mut gated, mut frames, mut blowups) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for set in sets {
        let motions: Vec<&MotionSequence> = set.rollouts.iter().map(|r| &r.reactor).collect();
        let gen = encoder.features_batch(spec, &motions)?;
        let f = fvd(&gen, &real)?;
        repeats.push(RepeatMetrics {
            seed: set.seed,
            fvd: f.value,
            fvd_regularized: f.regularized,
            diversity: diversity(&gen)?,
        });
        for r in &set.rollouts {
            if r.end == crate::imitation::RolloutEnd::Blowup {
                blowups += 1;
            }
            if let Some(g) = ground_distance(spec, &r.reactor, gd) {
                gd_sum += g;
                gd_n += 1;
            }
            frames += r.reactor.len();
            if let Some(p) = interpenetration(spec, &r.actor.states, &r.reactor.states, CONTACT_GATE)? {
                area += p.iv * p.gated_frames as f64;
                depth += p.id_mm * p.gated_frames as f64;
                gated += p.gated_frames;
            }
        }
    }
    let fv: Vec<f64> = repeats.iter().map(|r| r.fvd).collect();
    let dv: Vec<f64> = repeats.iter().map(|r| r.diversity).collect();
    Ok(MetricsReport {
        schema: REPORT_SCHEMA,
        samples_per_repeat: sets.first().map(|s| s.rollouts.len()).unwrap_or(0),
        fvd: Spread::of(&fv),
        diversity: Spread::of(&dv),
        real_diversity: diversity(&real)?,
        repeats,
        gd_mm: (gd_n > 0).then(|| gd_sum / gd_n as f64),
        gd_samples: gd_n,
        iv: (gated > 0).then(|| area / gated as f64),
        id_mm: (gated > 0).then(|| depth / gated as f64),
        gated_frames: gated,
        frames,
        blowups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub ticks: usize,
    pub fps: f64,
    pub latency: LatencyStats,
}

/// Sustained closed-loop rate over `ticks` control ticks, replaying `actor`
/// forwards and backwards. With `with_sim == false` only observation and
/// policy inference are timed. A reactor that blows up is reset to
/// `reactor_init` and the tick still counts.
pub fn throughput_bench(
    spec: &CharacterSpec,
    policy: &ReactionPolicy,
    actor: &[CharacterState],
    reactor_init: &CharacterState,
    ticks: usize,
    with_sim: bool,
) -> Result<Throughput> {
    if actor.len() < 2 {
        return Err(ForgeError::Contract("throughput bench needs at least two actor frames".into()));
    }
    let period = 2 * (actor.len() - 1);
    let frame = |t: usize| {
        let k = t % period;
        &actor[if k < actor.len() { k } else { period - k }]
    };
    let mut sim = Simulator::new(spec.clone())?;
    let mut rng = stream(0, "bench");
    let mut reactor = reactor_init.clone();
    let mut lat = Vec::with_capacity(ticks);
    let start = Instant::now();
    for t in 0..ticks {
        let t0 = Instant::now();
        let (cur, next) = (frame(t), frame(t + 1));
        let obs = policy.observe(spec, cur, &reactor, next);
        let (target, _) = policy.act(spec, &obs, &reactor, &mut rng, SampleMode::Deterministic)?;
        if with_sim {
            match sim.step_pd(&reactor, &target, &capsules(spec, next)) {
                Ok((s, _)) => reactor = s,
                Err(_) => reactor = reactor_init.clone(),
            }
        }
        lat.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Throughput {
        ticks,
        fps: ticks as f64 / secs.max(1e-12),
        latency: LatencyStats::from_samples(&lat),
    })
}
