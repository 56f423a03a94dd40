//! Runs the specialist/generalist loop on a trained policy: cluster demos,
//! fine-tune one specialist per cluster, distill back, keep the result only
//! if held-out loss does not rise.

use reaction_forge::igsl::{embed_and_cluster, igsl_loop, IgslConfig, IgslModels};
use reaction_forge::imitation::{imitation_data, FrozenModels};
use reaction_forge::pipeline::Stage;

mod common;

fn main() -> reaction_forge::error::Result<()> {
    let run = common::run_through(Stage::TrainPolicy)?;
    let (train, val) = run.demo_split()?;
    let (svae, avae) = run.vaes()?;
    let frozen = FrozenModels::new(&avae, &run.fdm()?);
    let data = imitation_data(&run.spec, &train, &svae, &avae)?;
    let heldout = imitation_data(&run.spec, &val, &svae, &avae)?;
    let config = IgslConfig {
        outer: 3,
        ..run.config.igsl.clone()
    };

    let clusters = embed_and_cluster(&run.spec, &train, &svae, config.k, config.pooling, 0)?;
    println!("cluster sizes {:?}", clusters.sizes());
    for c in 0..config.k {
        let mut fams: Vec<&str> = clusters.members(c).iter().map(|&i| train[i].family.as_str()).collect();
        fams.sort();
        fams.dedup();
        println!("  cluster {c}: {}", fams.join(", "));
    }

    let models = IgslModels {
        state_vae: &svae,
        action_vae: &avae,
        frozen: &frozen,
    };
    let (_, report) = igsl_loop(&run.spec, run.policy()?, &train, &data, &heldout, models, &config, &run.config.policy, 0)?;
    for it in &report.iterations {
        println!(
            "round {}: held-out {:.4} -> {:.4} {}",
            it.iteration,
            it.heldout_before,
            it.heldout_after,
            if it.accepted { "kept" } else { "rejected" }
        );
    }
    report.write_csv(std::io::stdout())?;
    Ok(())
}
