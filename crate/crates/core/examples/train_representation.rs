//! Fits the state and action VAEs on curated demonstrations and reports
//! held-out reconstruction error. Errors are in standardized units, where
//! always predicting the mean scores 1.

use reaction_forge::pipeline::Stage;
use reaction_forge::representation::{action_rows, reconstruction_mse, state_rows, train_vae, LatentKind};

mod common;

fn main() -> reaction_forge::error::Result<()> {
    let run = common::run_through(Stage::Curate)?;
    let (train, val) = run.demo_split()?;
    let spec = &run.spec;

    for (kind, config, rows) in [
        (LatentKind::State, &run.config.state_vae, state_rows as fn(_, _) -> _),
        (LatentKind::Action, &run.config.action_vae, action_rows),
    ] {
        let (x, held) = (rows(spec, &train), rows(spec, &val));
        let (vae, curve) = train_vae(&x, kind, config, 5)?;
        let last = curve.last().unwrap();
        println!(
            "{:>6} vae: {} -> {} dims, final loss {:.4} (recon {:.4}, kl {:.4})",
            kind.name(),
            vae.input_dim(),
            vae.latent_dim(),
            last.loss,
            last.reconstruction,
            last.kl
        );
        println!("        held-out mse {:.4}", reconstruction_mse(&vae, &held)?);
    }
    Ok(())
}
