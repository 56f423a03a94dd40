//! Trains the motion tracker with PPO on a synthetic corpus, then curates
//! physically valid demonstrations and checks that their recorded actions
//! replay exactly.

use reaction_forge::pipeline::RunConfig;
use reaction_forge::synth::{synth_interactions, SynthConfig};
use reaction_forge::tracker::{curate, replay_error, save_demos, train_tracker};
use reaction_forge_sim::CharacterSpec;

mod common;

fn main() -> reaction_forge::error::Result<()> {
    let spec = CharacterSpec::humanoid();
    let corpus = synth_interactions(
        &spec,
        &SynthConfig {
            pairs: 32,
            min_len: 60,
            max_len: 90,
            ..Default::default()
        },
        3,
    )?;
    let config = RunConfig::small().tracker;

    let start = std::time::Instant::now();
    let (tracker, log) = train_tracker(&spec, &corpus, &config, 1)?;
    for it in log.iter().step_by(4.max(log.len() / 8)) {
        println!("iter {:>3}  reward {:.3}", it.iteration, it.mean_reward);
    }
    println!("tracker trained in {:.1}s", start.elapsed().as_secs_f64());

    let (demos, report) = curate(&spec, &tracker, &corpus, &config, 2)?;
    println!("curated {}/{} pairs ({:.0}%)", report.accepted, report.pairs, 100.0 * report.success_rate);
    for (family, t) in &report.per_family {
        println!("{family:>22}: {}/{}", t.succeeded, t.pairs);
    }

    let mut worst = 0.0f64;
    for d in &demos {
        worst = worst.max(replay_error(&spec, &d.actor)?).max(replay_error(&spec, &d.reactor)?);
    }
    println!("worst replay error {worst:.2e} m");

    let dir = common::out_dir("demos");
    save_demos(&dir, &demos)?;
    println!("demos written to {}", dir.display());
    Ok(())
}
