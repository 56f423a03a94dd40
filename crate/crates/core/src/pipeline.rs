//! Run configuration, the staged pipeline with its resumable manifest, and
//! the noise-robustness experiment.
//!
//! Every stage reads its inputs from the run directory, so a resumed run
//! sees exactly what an uninterrupted one would have.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use reaction_forge_nn::{derive_seed, stream, Checkpoint};
use reaction_forge_sim::CharacterSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{add_noise_demo, split};
use crate::dynamics::{heldout_retrieval, latent_tuples, train_fdm, FdmConfig, ForwardDynamicsModel};
use crate::error::{ForgeError, Result};
use crate::eval::{
    evaluate_samples, sample_for_metrics, train_motion_encoder, EncoderConfig, GroundDistanceConfig, MetricsReport,
    MotionFeatureEncoder,
};
use crate::igsl::{igsl_loop, IgslConfig, IgslModels};
use crate::imitation::{evaluate_losses, imitation_data, new_policy, train_policy, FrozenModels, PolicyConfig, ReactionPolicy};
use crate::motion::{load_corpus, save_corpus, InteractionPair};
use crate::representation::{action_rows, reconstruction_mse, state_rows, train_vae, LatentKind, Vae, VaeConfig};
use crate::synth::{synth_interactions, SynthConfig};
use crate::tracker::{curate, load_demos, save_demos, train_tracker, Demo, TrackerConfig, TrackerPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Fraction of each family's kinematic pairs used for training; the
    /// rest are the test actor streams.
    pub train_ratio: f64,
    /// Fraction of curated demos held out for validation losses.
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            val_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub encoder: EncoderConfig,
    pub samples: usize,
    pub repeats: usize,
    pub gd: GroundDistanceConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            samples: 100,
            repeats: 10,
            gd: GroundDistanceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageFlags {
    pub gen_data: bool,
    pub track: bool,
    pub curate: bool,
    pub train_vae: bool,
    pub train_fdm: bool,
    pub train_policy: bool,
    pub igsl: bool,
    pub evaluate: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self::all(true)
    }
}

impl StageFlags {
    pub fn all(on: bool) -> Self {
        Self {
            gen_data: on,
            track: on,
            curate: on,
            train_vae: on,
            train_fdm: on,
            train_policy: on,
            igsl: on,
            evaluate: on,
        }
    }

    /// Every stage up to and including `last`.
    pub fn through(last: Stage) -> Self {
        let mut flags = Self::all(false);
        for s in Stage::ALL {
            *flags.flag_mut(s) = true;
            if s == last {
                break;
            }
        }
        flags
    }

    fn flag_mut(&mut self, stage: Stage) -> &mut bool {
        match stage {
            Stage::GenData => &mut self.gen_data,
            Stage::Track => &mut self.track,
            Stage::Curate => &mut self.curate,
            Stage::TrainVae => &mut self.train_vae,
            Stage::TrainFdm => &mut self.train_fdm,
            Stage::TrainPolicy => &mut self.train_policy,
            Stage::Igsl => &mut self.igsl,
            Stage::Evaluate => &mut self.evaluate,
        }
    }

    fn enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::GenData => self.gen_data,
            Stage::Track => self.track,
            Stage::Curate => self.curate,
            Stage::TrainVae => self.train_vae,
            Stage::TrainFdm => self.train_fdm,
            Stage::TrainPolicy => self.train_policy,
            Stage::Igsl => self.igsl,
            Stage::Evaluate => self.evaluate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Pose-noise variance injected into the curated demonstrations before
    /// any model is trained on them.
    pub noise_variance: f64,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub tracker: TrackerConfig,
    pub state_vae: VaeConfig,
    pub action_vae: VaeConfig,
    pub fdm: FdmConfig,
    pub policy: PolicyConfig,
    pub igsl: IgslConfig,
    pub eval: EvalConfig,
    pub stages: StageFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            noise_variance: 0.0,
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            tracker: TrackerConfig::default(),
            state_vae: VaeConfig::state(),
            action_vae: VaeConfig::action(),
            fdm: FdmConfig::default(),
            policy: PolicyConfig::default(),
            igsl: IgslConfig::default(),
            eval: EvalConfig::default(),
            stages: StageFlags::default(),
        }
    }
}

impl RunConfig {
    /// A configuration small enough for tests and examples: a few minutes
    /// end to end on one machine.
    pub fn small() -> Self {
        let mut c = Self::default();
        c.synth.pairs = 60;
        c.synth.max_len = 120;
        c.tracker.iterations = 15;
        c.tracker.retries = 3;
        c.state_vae.epochs = 15;
        c.action_vae.epochs = 15;
        c.fdm.epochs = 15;
        c.policy.epochs = 15;
        c.igsl.k = 3;
        c.igsl.outer = 1;
        c.igsl.specialist_epochs = 3;
        c.igsl.distill_epochs = 3;
        c.eval.samples = 20;
        c.eval.repeats = 2;
        c.eval.encoder.epochs = 20;
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| ForgeError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ForgeError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.tracker.ppo.validate()?;
        self.state_vae.validate()?;
        self.action_vae.validate()?;
        self.fdm.validate()?;
        self.policy.validate()?;
        self.igsl.validate()?;
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(ForgeError::Config(format!("noise_variance must be ≥ 0, got {}", self.noise_variance)));
        }
        if !(self.split.train_ratio > 0.0 && self.split.train_ratio < 1.0) {
            return Err(ForgeError::Config("split.train_ratio must lie in (0, 1)".into()));
        }
        if !(self.split.val_fraction > 0.0 && self.split.val_fraction < 1.0) {
            return Err(ForgeError::Config("split.val_fraction must lie in (0, 1)".into()));
        }
        if self.eval.samples == 0 || self.eval.repeats == 0 {
            return Err(ForgeError::Config("eval.samples and eval.repeats must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. Stage flags are left out: they
    /// select work, they do not change what a stage produces.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            stages: StageFlags::all(true),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Per-stage seed; stages never share a stream.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, stage.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    Track,
    Curate,
    TrainVae,
    TrainFdm,
    TrainPolicy,
    Igsl,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenData,
        Stage::Track,
        Stage::Curate,
        Stage::TrainVae,
        Stage::TrainFdm,
        Stage::TrainPolicy,
        Stage::Igsl,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Track => "track",
            Stage::Curate => "curate",
            Stage::TrainVae => "train-vae",
            Stage::TrainFdm => "train-fdm",
            Stage::TrainPolicy => "train-policy",
            Stage::Igsl => "igsl",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Fixed artifact names inside a run directory.
pub mod artifacts {
    pub const MANIFEST: &str = "manifest.json";
    pub const CONFIG: &str = "config.json";
    pub const TRAIN_CORPUS: &str = "corpus/train";
    pub const TEST_CORPUS: &str = "corpus/test";
    pub const TRACKER: &str = "tracker.ckpt";
    pub const TRACKER_LOG: &str = "tracker_log.json";
    pub const DEMOS: &str = "demos";
    pub const CURATION: &str = "curation.json";
    pub const STATE_VAE: &str = "state_vae.ckpt";
    pub const ACTION_VAE: &str = "action_vae.ckpt";
    pub const FDM: &str = "fdm.ckpt";
    pub const FDM_CURVE: &str = "fdm_curve.json";
    pub const POLICY: &str = "policy.ckpt";
    pub const POLICY_CURVE: &str = "policy_curve.json";
    pub const IGSL_POLICY: &str = "policy_igsl.ckpt";
    pub const IGSL_CSV: &str = "igsl.csv";
    pub const IGSL_REPORT: &str = "igsl.json";
    pub const MOTION_ENCODER: &str = "motion_encoder.ckpt";
    pub const METRICS: &str = "metrics.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub artifacts: Vec<String>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        Self {
            version: format!("v{}", env!("CARGO_PKG_VERSION")),
            config_hash,
            stages: Vec::new(),
        }
    }

    pub fn completed(&self, stage: Stage) -> bool {
        self.stages.iter().any(|s| s.stage == stage.name())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// The manifest with timestamps zeroed, for run-to-run comparison.
    pub fn without_timestamps(&self) -> Self {
        let mut m = self.clone();
        for s in &mut m.stages {
            s.started_unix = 0.0;
            s.finished_unix = 0.0;
        }
        m
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn missing(stage: Stage, what: &str) -> ForgeError {
    ForgeError::Contract(format!("stage `{}` needs {what}; run the producing stage first", stage.name()))
}

/// A loaded run directory.
pub struct Run {
    pub dir: PathBuf,
    pub spec: CharacterSpec,
    pub config: RunConfig,
}

impl Run {
    pub fn new(dir: impl Into<PathBuf>, config: RunConfig) -> Self {
        Self {
            dir: dir.into(),
            spec: CharacterSpec::humanoid(),
            config,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn train_corpus(&self) -> Result<Vec<InteractionPair>> {
        load_corpus(self.path(artifacts::TRAIN_CORPUS))
    }

    pub fn test_corpus(&self) -> Result<Vec<InteractionPair>> {
        load_corpus(self.path(artifacts::TEST_CORPUS))
    }

    pub fn demos(&self) -> Result<Vec<Demo>> {
        load_demos(self.path(artifacts::DEMOS))
    }

    /// Curated demos split into (train, validation) by a seeded shuffle.
    pub fn demo_split(&self) -> Result<(Vec<Demo>, Vec<Demo>)> {
        let demos = self.demos()?;
        split_demos(demos, self.config.split.val_fraction, self.config.seed)
    }

    pub fn tracker(&self) -> Result<TrackerPolicy> {
        TrackerPolicy::from_checkpoint(&Checkpoint::load(self.path(artifacts::TRACKER))?)
    }

    pub fn vaes(&self) -> Result<(Vae, Vae)> {
        Ok((
            Vae::read_from(&Checkpoint::load(self.path(artifacts::STATE_VAE))?, LatentKind::State)?,
            Vae::read_from(&Checkpoint::load(self.path(artifacts::ACTION_VAE))?, LatentKind::Action)?,
        ))
    }

    pub fn fdm(&self) -> Result<ForwardDynamicsModel> {
        ForwardDynamicsModel::read_from(&Checkpoint::load(self.path(artifacts::FDM))?)
    }

    pub fn policy(&self) -> Result<ReactionPolicy> {
        ReactionPolicy::read_from(&Checkpoint::load(self.path(artifacts::POLICY))?)
    }

    /// The IGSL generalist if that stage ran, otherwise the plain policy.
    pub fn final_policy(&self) -> Result<ReactionPolicy> {
        let igsl = self.path(artifacts::IGSL_POLICY);
        if igsl.exists() {
            ReactionPolicy::read_from(&Checkpoint::load(igsl)?)
        } else {
            self.policy()
        }
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        Ok(serde_json::from_str(&std::fs::read_to_string(self.path(artifacts::METRICS))?)?)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        RunManifest::load(self.path(artifacts::MANIFEST))
    }
}

/// Seeded (train, validation) split of curated demos; the validation side
/// gets at least two demos whenever there are four or more.
pub fn split_demos(mut demos: Vec<Demo>, val_fraction: f64, seed: u64) -> Result<(Vec<Demo>, Vec<Demo>)> {
    if demos.len() < 2 {
        return Err(ForgeError::Contract(format!("need at least two demos to split, have {}", demos.len())));
    }
    demos.sort_by_key(|d| d.id);
    let mut idx: Vec<usize> = (0..demos.len()).collect();
    idx.shuffle(&mut stream(seed, "split/demos"));
    let mut n_val = (val_fraction * demos.len() as f64).round() as usize;
    if demos.len() >= 4 {
        n_val = n_val.max(2);
    }
    n_val = n_val.clamp(1, demos.len() - 1);
    let mut val_idx = idx[..n_val].to_vec();
    val_idx.sort_unstable();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, d) in demos.into_iter().enumerate() {
        if val_idx.binary_search(&i).is_ok() {
            val.push(d);
        } else {
            train.push(d);
        }
    }
    Ok((train, val))
}

fn save_checkpoint(path: &Path, write: impl FnOnce(&mut Checkpoint)) -> Result<()> {
    let mut c = Checkpoint::new();
    write(&mut c);
    c.save(path)?;
    Ok(())
}

/// Runs one stage against the run directory and returns its artifact names
/// and summary.
pub fn run_stage(run: &Run, stage: Stage) -> Result<(Vec<String>, serde_json::Value)> {
    let cfg = &run.config;
    let spec = &run.spec;
    let seed = cfg.stage_seed(stage);
    let need = |name: &str, what: &str| -> Result<()> {
        if run.path(name).exists() {
            Ok(())
        } else {
            Err(missing(stage, what))
        }
    };
    match stage {
        Stage::GenData => {
            let corpus = synth_interactions(spec, &cfg.synth, seed)?;
            let (train, test) = split(&corpus, cfg.split.train_ratio, derive_seed(seed, "split"))?;
            save_corpus(run.path(artifacts::TRAIN_CORPUS), &train)?;
            save_corpus(run.path(artifacts::TEST_CORPUS), &test)?;
            Ok((
                vec![artifacts::TRAIN_CORPUS.into(), artifacts::TEST_CORPUS.into()],
                serde_json::json!({ "train_pairs": train.len(), "test_pairs": test.len() }),
            ))
        }
        Stage::Track => {
            need(artifacts::TRAIN_CORPUS, "the training corpus")?;
            let corpus = run.train_corpus()?;
            let (policy, log) = train_tracker(spec, &corpus, &cfg.tracker, seed)?;
            policy.to_checkpoint().save(run.path(artifacts::TRACKER))?;
            write_json(&run.path(artifacts::TRACKER_LOG), &log)?;
            let last = log.last().map(|l| l.mean_reward);
            Ok((
                vec![artifacts::TRACKER.into(), artifacts::TRACKER_LOG.into()],
                serde_json::json!({ "iterations": log.len(), "final_mean_reward": last }),
            ))
        }
        Stage::Curate => {
            need(artifacts::TRACKER, "a trained tracker")?;
            let corpus = run.train_corpus()?;
            let (demos, report) = curate(spec, &run.tracker()?, &corpus, &cfg.tracker, seed)?;
            let demos = if cfg.noise_variance > 0.0 {
                demos
                    .iter()
                    .map(|d| add_noise_demo(d, cfg.noise_variance, derive_seed(seed, "noise")))
                    .collect::<Result<Vec<_>>>()?
            } else {
                demos
            };
            save_demos(run.path(artifacts::DEMOS), &demos)?;
            write_json(&run.path(artifacts::CURATION), &report)?;
            Ok((
                vec![artifacts::DEMOS.into(), artifacts::CURATION.into()],
                serde_json::json!({ "pairs": report.pairs, "accepted": report.accepted, "success_rate": report.success_rate }),
            ))
        }
        Stage::TrainVae => {
            need(artifacts::DEMOS, "curated demos")?;
            let (train, val) = run.demo_split()?;
            let (svae, _) = train_vae(&state_rows(spec, &train), LatentKind::State, &cfg.state_vae, derive_seed(seed, "state"))?;
            let (avae, _) = train_vae(&action_rows(spec, &train), LatentKind::Action, &cfg.action_vae, derive_seed(seed, "action"))?;
            save_checkpoint(&run.path(artifacts::STATE_VAE), |c| svae.write_to(c))?;
            save_checkpoint(&run.path(artifacts::ACTION_VAE), |c| avae.write_to(c))?;
            Ok((
                vec![artifacts::STATE_VAE.into(), artifacts::ACTION_VAE.into()],
                serde_json::json!({
                    "state_heldout_mse": reconstruction_mse(&svae, &state_rows(spec, &val))?,
                    "action_heldout_mse": reconstruction_mse(&avae, &action_rows(spec, &val))?,
                }),
            ))
        }
        Stage::TrainFdm => {
            need(artifacts::STATE_VAE, "trained VAEs")?;
            let (train, val) = run.demo_split()?;
            let (svae, avae) = run.vaes()?;
            let tt = latent_tuples(spec, &train, &svae, &avae)?;
            let tv = latent_tuples(spec, &val, &svae, &avae)?;
            let (fdm, curve) = train_fdm(&tt, &tv, &cfg.fdm, seed)?;
            save_checkpoint(&run.path(artifacts::FDM), |c| fdm.write_to(c))?;
            write_json(&run.path(artifacts::FDM_CURVE), &curve)?;
            Ok((
                vec![artifacts::FDM.into(), artifacts::FDM_CURVE.into()],
                serde_json::json!({
                    "final_loss": curve.last().map(|e| e.loss),
                    "heldout_retrieval": heldout_retrieval(&fdm, &tv, &cfg.fdm, derive_seed(seed, "eval"))?,
                }),
            ))
        }
        Stage::TrainPolicy => {
            need(artifacts::FDM, "a trained forward dynamics model")?;
            let (train, val) = run.demo_split()?;
            let (svae, avae) = run.vaes()?;
            let frozen = FrozenModels::new(&avae, &run.fdm()?);
            let data = imitation_data(spec, &train, &svae, &avae)?;
            let init = new_policy(spec, &data, &cfg.policy, seed);
            let (policy, curve) = train_policy(init, &data, &frozen, &cfg.policy, seed)?;
            save_checkpoint(&run.path(artifacts::POLICY), |c| policy.write_to(c))?;
            write_json(&run.path(artifacts::POLICY_CURVE), &curve)?;
            let heldout = evaluate_losses(&policy, &frozen, &imitation_data(spec, &val, &svae, &avae)?, &cfg.policy)?;
            Ok((
                vec![artifacts::POLICY.into(), artifacts::POLICY_CURVE.into()],
                serde_json::json!({ "heldout_loss": heldout }),
            ))
        }
        Stage::Igsl => {
            need(artifacts::POLICY, "a trained policy")?;
            let (train, val) = run.demo_split()?;
            let (svae, avae) = run.vaes()?;
            let frozen = FrozenModels::new(&avae, &run.fdm()?);
            let data = imitation_data(spec, &train, &svae, &avae)?;
            let heldout = imitation_data(spec, &val, &svae, &avae)?;
            let models = IgslModels {
                state_vae: &svae,
                action_vae: &avae,
                frozen: &frozen,
            };
            let (policy, report) = igsl_loop(spec, run.policy()?, &train, &data, &heldout, models, &cfg.igsl, &cfg.policy, seed)?;
            save_checkpoint(&run.path(artifacts::IGSL_POLICY), |c| policy.write_to(c))?;
            report.write_csv(std::fs::File::create(run.path(artifacts::IGSL_CSV))?)?;
            write_json(&run.path(artifacts::IGSL_REPORT), &report)?;
            Ok((
                vec![artifacts::IGSL_POLICY.into(), artifacts::IGSL_CSV.into(), artifacts::IGSL_REPORT.into()],
                serde_json::json!({
                    "initial_heldout": report.initial_heldout,
                    "final_heldout": report.final_heldout,
                    "accepted": report.iterations.iter().filter(|i| i.accepted).count(),
                }),
            ))
        }
        Stage::Evaluate => {
            need(artifacts::POLICY, "a trained policy")?;
            let train = run.train_corpus()?;
            let test = run.test_corpus()?;
            let reactors: Vec<_> = train.iter().map(|p| &p.reactor).collect();
            let (encoder, _) = train_motion_encoder(spec, &reactors, &cfg.eval.encoder, derive_seed(seed, "encoder"))?;
            save_checkpoint(&run.path(artifacts::MOTION_ENCODER), |c| encoder.write_to(c))?;
            let report = evaluate_policy(spec, &run.final_policy()?, &encoder, &test, &cfg.eval, derive_seed(seed, "samples"))?;
            write_json(&run.path(artifacts::METRICS), &report)?;
            Ok((
                vec![artifacts::MOTION_ENCODER.into(), artifacts::METRICS.into()],
                serde_json::json!({
                    "fvd": report.fvd,
                    "diversity": report.diversity,
                    "real_diversity": report.real_diversity,
                    "gd_mm": report.gd_mm,
                    "iv": report.iv,
                    "id_mm": report.id_mm,
                    "blowups": report.blowups,
                }),
            ))
        }
    }
}

/// Samples `policy` on `test` and scores the samples.
pub fn evaluate_policy(
    spec: &CharacterSpec,
    policy: &ReactionPolicy,
    encoder: &MotionFeatureEncoder,
    test: &[InteractionPair],
    config: &EvalConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let sets = sample_for_metrics(spec, policy, test, config.samples, config.repeats, seed)?;
    evaluate_samples(spec, encoder, test, &sets, &config.gd)
}

fn open_manifest(path: &Path, config: &RunConfig) -> Result<RunManifest> {
    let hash = config.hash();
    if !path.exists() {
        return Ok(RunManifest::new(hash));
    }
    let m = RunManifest::load(path)?;
    if m.config_hash != hash {
        return Err(ForgeError::Config(format!(
            "{} was produced by config {}, not {hash}",
            path.display(),
            m.config_hash
        )));
    }
    Ok(m)
}

/// Runs every enabled stage not yet recorded in the run's manifest. An
/// existing manifest must carry the same config hash.
pub fn pipeline_run(dir: impl AsRef<Path>, config: &RunConfig) -> Result<RunManifest> {
    config.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let run = Run::new(dir, config.clone());
    let manifest_path = run.path(artifacts::MANIFEST);
    let mut manifest = open_manifest(&manifest_path, config)?;
    write_json(&run.path(artifacts::CONFIG), config)?;
    manifest.save(&manifest_path)?;
    for stage in Stage::ALL {
        if !config.stages.enabled(stage) || manifest.completed(stage) {
            continue;
        }
        let started_unix = now();
        let (artifacts, summary) = run_stage(&run, stage).map_err(|e| e.in_stage(stage.name()))?;
        manifest.stages.push(StageRecord {
            stage: stage.name().to_string(),
            started_unix,
            finished_unix: now(),
            artifacts,
            summary,
        });
        manifest.save(&manifest_path)?;
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub variance: f64,
    pub fvd: f64,
    pub diversity: f64,
    pub delta_fvd: f64,
    pub delta_diversity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub clean_fvd: f64,
    pub clean_diversity: f64,
    pub rows: Vec<NoiseRow>,
}

/// Retrains the whole pipeline once on clean data and once per variance
/// (noise on the curated demonstrations only), each in its own subdirectory of
/// `root`, and reports metric deltas against the clean run.
pub fn noise_experiment(root: impl AsRef<Path>, base: &RunConfig, variances: &[f64]) -> Result<NoiseReport> {
    let root = root.as_ref();
    let mut clean_cfg = base.clone();
    clean_cfg.noise_variance = 0.0;
    clean_cfg.stages = StageFlags::all(true);
    pipeline_run(root.join("clean"), &clean_cfg)?;
    let clean = Run::new(root.join("clean"), clean_cfg.clone()).metrics()?;
    let mut rows = Vec::with_capacity(variances.len());
    for &v in variances {
        let cfg = RunConfig {
            noise_variance: v,
            ..clean_cfg.clone()
        };
        let dir = root.join(format!("variance-{v}"));
        pipeline_run(&dir, &cfg)?;
        let m = Run::new(&dir, cfg).metrics()?;
        rows.push(NoiseRow {
            variance: v,
            fvd: m.fvd.mean,
            diversity: m.diversity.mean,
            delta_fvd: m.fvd.mean - clean.fvd.mean,
            delta_diversity: m.diversity.mean - clean.diversity.mean,
        });
    }
    Ok(NoiseReport {
        clean_fvd: clean.fvd.mean,
        clean_diversity: clean.diversity.mean,
        rows,
    })
}

/// Runs `stages` in order regardless of the enable flags or earlier
/// records, appending to the run's manifest.
pub fn run_stages(dir: impl AsRef<Path>, config: &RunConfig, stages: &[Stage]) -> Result<RunManifest> {
    config.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let run = Run::new(dir, config.clone());
    let manifest_path = run.path(artifacts::MANIFEST);
    let mut manifest = open_manifest(&manifest_path, config)?;
    write_json(&run.path(artifacts::CONFIG), config)?;
    for &stage in stages {
        let started_unix = now();
        let (artifacts, summary) = run_stage(&run, stage).map_err(|e| e.in_stage(stage.name()))?;
        manifest.stages.push(StageRecord {
            stage: stage.name().to_string(),
            started_unix,
            finished_unix: now(),
            artifacts,
            summary,
        });
        manifest.save(&manifest_path)?;
    }
    manifest.save(&manifest_path)?;
    Ok(manifest)
}

/// Sets `path` (dot separated) in a JSON config to `value`, parsed as JSON
/// when possible and as a string otherwise.
pub fn override_key(config: &mut serde_json::Value, path: &str, value: &str) -> Result<()> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    let mut node = config;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ForgeError::Config(format!("`{}` is not a table", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            if !obj.contains_key(*key) {
                return Err(ForgeError::Config(format!("unknown config key `{path}`")));
            }
            obj.insert(key.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .get_mut(*key)
            .ok_or_else(|| ForgeError::Config(format!("unknown config key `{path}`")))?;
    }
    Ok(())
}

/// A config from an optional JSON file (defaults otherwise) with
/// `key=value` overrides applied.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let base = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ForgeError::Config(format!("override `{o}` is not key=value")))?;
        override_key(&mut value, k.trim(), v.trim())?;
    }
    let c: RunConfig = serde_json::from_value(value).map_err(|e| ForgeError::Config(e.to_string()))?;
    c.validate()?;
    Ok(c)
}
