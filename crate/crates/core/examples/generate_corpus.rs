//! Synthesizes a small interaction corpus, prints per-family statistics and
//! writes it to disk in the binary clip format.

use reaction_forge::dataset::split;
use reaction_forge::motion::{load_corpus, save_corpus};
use reaction_forge::synth::{synth_interactions, SynthConfig};
use reaction_forge_sim::CharacterSpec;

mod common;

fn main() -> reaction_forge::error::Result<()> {
    let spec = CharacterSpec::humanoid();
    let config = SynthConfig {
        pairs: 24,
        ..Default::default()
    };
    let corpus = synth_interactions(&spec, &config, 7)?;
    let (train, test) = split(&corpus, 0.75, 7)?;

    let mut frames = std::collections::BTreeMap::<&str, (usize, usize)>::new();
    for p in &corpus {
        let e = frames.entry(p.family()).or_default();
        e.0 += 1;
        e.1 += p.len();
    }
    for (family, (pairs, n)) in &frames {
        println!("{family:>22}: {pairs} pairs, {n} frames");
    }

    let dir = common::out_dir("corpus");
    save_corpus(dir.join("train"), &train)?;
    save_corpus(dir.join("test"), &test)?;
    let back = load_corpus(dir.join("train"))?;
    println!("wrote {} train / {} test clips to {}", back.len(), test.len(), dir.display());
    Ok(())
}
