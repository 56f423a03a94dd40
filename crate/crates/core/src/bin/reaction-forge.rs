use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reaction_forge::error::{ForgeError, Result};
use reaction_forge::eval::{throughput_bench, train_motion_encoder, MotionFeatureEncoder};
use reaction_forge::imitation::{rollout_online, ReactionPolicy, ReplayStream};
use reaction_forge::motion::{load_corpus, load_motion, save_motion, InteractionPair};
use reaction_forge::pipeline::{
    artifacts, evaluate_policy, load_config, noise_experiment, pipeline_run, run_stages, Run, RunConfig, Stage,
};
use reaction_forge::render::render_frames;
use reaction_forge_nn::{derive_seed, rng_from_seed, Checkpoint, SampleMode};
use reaction_forge_sim::CharacterSpec;

#[derive(Parser)]
#[command(name = "reaction-forge", version, about = "Physically grounded reaction synthesis on a planar humanoid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run directory holding artifacts and the manifest.
    #[arg(long, default_value = "runs/default")]
    run: PathBuf,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set policy.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn load(&self, extra: &[String]) -> Result<RunConfig> {
        let mut all = self.overrides.clone();
        all.extend_from_slice(extra);
        load_config(self.config.as_deref(), &all)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the kinematic corpus and split it into train and test.
    GenData(RunArgs),
    /// Train the tracker and curate demonstrations.
    Track(RunArgs),
    /// Train the state and action VAEs.
    TrainVae(RunArgs),
    /// Train the forward dynamics model.
    TrainFdm(RunArgs),
    /// Train the reaction policy.
    TrainPolicy(RunArgs),
    /// Generalist-specialist refinement of the trained policy.
    Igsl {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Drive a policy against a recorded actor track.
    Rollout {
        /// Motion file; its actor track drives the rollout and its reactor's
        /// first frame is the initial state.
        #[arg(long)]
        actor: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Latency CSV; defaults to the output path with `.latency.csv`.
        #[arg(long)]
        latency: Option<PathBuf>,
        /// Also report sustained closed-loop throughput over 1000 ticks.
        #[arg(long)]
        bench: bool,
        #[arg(long)]
        stochastic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a policy with FVD, diversity, GD and interpenetration.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Policy checkpoint; defaults to the run's final policy.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Test corpus directory; defaults to the run's test split.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Report path; defaults to the run's metrics file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one SVG per frame of a motion file.
    Render {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every enabled stage, resuming from the manifest.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Instead of one run, retrain per pose-noise variance and report
        /// metric deltas against a clean run.
        #[arg(long, value_delimiter = ',')]
        noise: Option<Vec<f64>>,
    },
}

fn stages(args: &RunArgs, stages: &[Stage], extra: &[String]) -> Result<()> {
    let config = args.load(extra)?;
    let manifest = run_stages(&args.run, &config, stages)?;
    for s in manifest.stages.iter().rev().take(stages.len()).rev() {
        println!("{}: {}", s.stage, s.summary);
    }
    Ok(())
}

fn write_latency(path: &Path, ms: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ForgeError::Io(e.into()))?;
    w.write_record(["tick", "ms"]).map_err(|e| ForgeError::Io(e.into()))?;
    for (t, v) in ms.iter().enumerate() {
        w.write_record([t.to_string(), format!("{v:.6}")]).map_err(|e| ForgeError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

fn load_policy(path: &Path) -> Result<ReactionPolicy> {
    ReactionPolicy::read_from(&Checkpoint::load(path)?)
}

fn execute(cli: Cli) -> Result<()> {
    let spec = CharacterSpec::humanoid();
    match cli.command {
        Command::GenData(a) => stages(&a, &[Stage::GenData], &[]),
        Command::Track(a) => stages(&a, &[Stage::Track, Stage::Curate], &[]),
        Command::TrainVae(a) => stages(&a, &[Stage::TrainVae], &[]),
        Command::TrainFdm(a) => stages(&a, &[Stage::TrainFdm], &[]),
        Command::TrainPolicy(a) => stages(&a, &[Stage::TrainPolicy], &[]),
        Command::Igsl { run, k, iters } => {
            let mut extra = Vec::new();
            if let Some(k) = k {
                extra.push(format!("igsl.k={k}"));
            }
            if let Some(n) = iters {
                extra.push(format!("igsl.outer={n}"));
            }
            stages(&run, &[Stage::Igsl], &extra)
        }
        Command::Rollout {
            actor,
            ckpt,
            out,
            latency,
            bench,
            stochastic,
            seed,
        } => {
            let pair = load_motion(&actor)?;
            let init = pair
                .reactor
                .states
                .first()
                .cloned()
                .ok_or_else(|| ForgeError::Config(format!("{} has no frames", actor.display())))?;
            let policy = load_policy(&ckpt)?;
            let mode = if stochastic { SampleMode::Stochastic } else { SampleMode::Deterministic };
            let mut rng = rng_from_seed(derive_seed(seed, "rollout"));
            let result = rollout_online(
                &spec,
                &policy,
                &mut ReplayStream::new(pair.actor.states.clone()),
                init.clone(),
                mode,
                &mut rng,
                None,
                pair.fps(),
            )?;
            let mut actor_seq = result.actor.clone();
            actor_seq.family = pair.family().to_string();
            let mut reactor_seq = result.reactor.clone();
            reactor_seq.family = pair.family().to_string();
            save_motion(&out, &InteractionPair::new(pair.id, actor_seq, reactor_seq)?)?;
            let latency = latency.unwrap_or_else(|| out.with_extension("latency.csv"));
            write_latency(&latency, &result.latency_ms)?;
            println!("{}", serde_json::json!({ "ticks": result.latency_ms.len(), "end": result.end, "latency": result.latency() }));
            if bench {
                let closed = throughput_bench(&spec, &policy, &pair.actor.states, &init, 1000, true)?;
                let open = throughput_bench(&spec, &policy, &pair.actor.states, &init, 1000, false)?;
                println!("{}", serde_json::json!({ "closed_loop": closed, "policy_only": open }));
            }
            Ok(())
        }
        Command::Evaluate { run, ckpt, test, out } => {
            let config = run.load(&[])?;
            if ckpt.is_none() && test.is_none() && out.is_none() {
                return stages(&run, &[Stage::Evaluate], &[]);
            }
            let r = Run::new(&run.run, config.clone());
            let policy = match &ckpt {
                Some(p) => load_policy(p)?,
                None => r.final_policy()?,
            };
            let test = match &test {
                Some(dir) => load_corpus(dir)?,
                None => r.test_corpus()?,
            };
            let enc_path = r.path(artifacts::MOTION_ENCODER);
            let encoder = if enc_path.exists() {
                MotionFeatureEncoder::read_from(&Checkpoint::load(&enc_path)?)?
            } else {
                let train = r.train_corpus()?;
                let reactors: Vec<_> = train.iter().map(|p| &p.reactor).collect();
                let seed = derive_seed(config.stage_seed(Stage::Evaluate), "encoder");
                train_motion_encoder(&spec, &reactors, &config.eval.encoder, seed)?.0
            };
            let seed = derive_seed(config.stage_seed(Stage::Evaluate), "samples");
            let report = evaluate_policy(&spec, &policy, &encoder, &test, &config.eval, seed)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Render { motion, out } => {
            let pair = load_motion(&motion)?;
            let n = render_frames(&spec, &pair, &out)?;
            println!("wrote {n} frames to {}", out.display());
            Ok(())
        }
        Command::Pipeline { run, noise } => {
            let config = run.load(&[])?;
            match noise {
                Some(variances) => {
                    let report = noise_experiment(&run.run, &config, &variances)?;
                    let text = serde_json::to_string_pretty(&report)?;
                    std::fs::create_dir_all(&run.run)?;
                    std::fs::write(run.run.join("noise.json"), &text)?;
                    println!("{text}");
                }
                None => {
                    let manifest = pipeline_run(&run.run, &config)?;
                    for s in &manifest.stages {
                        println!("{}: {}", s.stage, s.summary);
                    }
                }
            }
            Ok(())
        }
    }
}

fn exit_code(e: &ForgeError) -> u8 {
    match e {
        ForgeError::Config(_) => 2,
        ForgeError::Stage { source, .. } => exit_code(source),
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("REACTION_FORGE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: cannot size the worker pool: {e}");
                    return ExitCode::from(3);
                }
            }
            _ => {
                eprintln!("error: REACTION_FORGE_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
