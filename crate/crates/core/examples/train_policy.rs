//! Trains the reaction policy with and without the forward-dynamics term
//! and compares held-out imitation losses.

use reaction_forge::imitation::{evaluate_losses, imitation_data, new_policy, train_policy, FrozenModels};
use reaction_forge::pipeline::Stage;

mod common;

fn main() -> reaction_forge::error::Result<()> {
    let run = common::run_through(Stage::TrainFdm)?;
    let (train, val) = run.demo_split()?;
    let (svae, avae) = run.vaes()?;
    let frozen = FrozenModels::new(&avae, &run.fdm()?);
    let data = imitation_data(&run.spec, &train, &svae, &avae)?;
    let heldout = imitation_data(&run.spec, &val, &svae, &avae)?;

    let with = run.config.policy.clone();
    for (label, config) in [("with fdm", with.clone()), ("without fdm", with.without_fdm())] {
        let init = new_policy(&run.spec, &data, &config, 3);
        let (policy, curve) = train_policy(init, &data, &frozen, &config, 3)?;
        let first = curve.first().unwrap().loss;
        let last = curve.last().unwrap().loss;
        let held = evaluate_losses(&policy, &frozen, &heldout, &with)?;
        println!("{label:>12}: train total {:.3} -> {:.3}", first.total, last.total);
        println!(
            "{:>12}  held-out bc {:.3} fd {:.3} reg {:.4} total {:.3}",
            "", held.bc, held.fd, held.reg, held.total
        );
    }
    Ok(())
}
