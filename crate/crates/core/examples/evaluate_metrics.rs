//! Runs the whole small pipeline and prints the evaluation metrics, then
//! times closed-loop inference on one test stream.

use reaction_forge::eval::throughput_bench;
use reaction_forge::pipeline::Stage;

mod common;

fn main() -> reaction_forge::error::Result<()> {
    let run = common::run_through(Stage::Evaluate)?;
    let m = run.metrics()?;
    println!("{} samples x {} repeats", m.samples_per_repeat, m.repeats.len());
    println!("FVD        {:.3} ± {:.3}", m.fvd.mean, m.fvd.std);
    println!("Diversity  {:.3} ± {:.3} (real {:.3})", m.diversity.mean, m.diversity.std, m.real_diversity);
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!("GD         {} mm over {} samples", show(m.gd_mm), m.gd_samples);
    println!("IV         {} m²", show(m.iv));
    println!("ID         {} mm over {} gated frames", show(m.id_mm), m.gated_frames);

    let test = run.test_corpus()?;
    let p = &test[0];
    let t = throughput_bench(&run.spec, &run.final_policy()?, &p.actor.states, &p.reactor.states[0], 2000, true)?;
    println!("throughput {:.0} ticks/s, p99 {:.3} ms", t.fps, t.latency.p99_ms);
    Ok(())
}
