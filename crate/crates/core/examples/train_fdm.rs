//! Trains the contrastive forward dynamics model on VAE latents and probes
//! how far its rolled-out forecasts stay aligned with the true latents.

use reaction_forge::dynamics::{heldout_retrieval, latent_tuples, train_fdm};
use reaction_forge::imitation::long_range_eval;
use reaction_forge::pipeline::Stage;

mod common;

fn main() -> reaction_forge::error::Result<()> {
    let run = common::run_through(Stage::TrainVae)?;
    let (train, val) = run.demo_split()?;
    let (svae, avae) = run.vaes()?;
    let tt = latent_tuples(&run.spec, &train, &svae, &avae)?;
    let tv = latent_tuples(&run.spec, &val, &svae, &avae)?;
    println!("{} train tuples, {} held-out", tt.len(), tv.len());

    let config = &run.config.fdm;
    let (fdm, curve) = train_fdm(&tt, &tv, config, 11)?;
    for e in &curve {
        println!("epoch {:>3}  loss {:.4}  retrieval {:.3}", e.epoch, e.loss, e.retrieval);
    }
    println!(
        "held-out top-1 retrieval {:.3} (chance {:.3})",
        heldout_retrieval(&fdm, &tv, config, 1)?,
        1.0 / config.eval_batch as f64
    );

    let probe = long_range_eval(&fdm, &tv, 10, 5)?;
    for (h, s) in probe.similarity.iter().enumerate() {
        println!("horizon {h:>2}: cosine {s:.3}");
    }
    Ok(())
}
