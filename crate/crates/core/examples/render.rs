//! Writes one SVG per frame of a synthetic interaction.

use reaction_forge::render::render_frames;
use reaction_forge::synth::{synth_interactions, SynthConfig, FAMILIES};
use reaction_forge_sim::CharacterSpec;

mod common;

fn main() -> reaction_forge::error::Result<()> {
    let spec = CharacterSpec::humanoid();
    let pairs = synth_interactions(
        &spec,
        &SynthConfig {
            pairs: FAMILIES.len(),
            ..Default::default()
        },
        1,
    )?;
    let root = common::out_dir("render");
    for p in &pairs {
        let dir = root.join(p.family());
        let n = render_frames(&spec, p, &dir)?;
        println!("{:>22}: {n} frames in {}", p.family(), dir.display());
    }
    Ok(())
}
