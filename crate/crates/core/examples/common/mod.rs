use std::path::PathBuf;

use reaction_forge::error::Result;
use reaction_forge::pipeline::{pipeline_run, Run, RunConfig, Stage, StageFlags};

/// Output directory from the first argument, or a fixed spot under the
/// system temp dir so successive examples reuse each other's stages.
pub fn out_dir(name: &str) -> PathBuf {
    std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("reaction-forge-examples").join(name))
}

/// The small run, carried through `last`. Stages already on disk are skipped.
#[allow(dead_code)]
pub fn run_through(last: Stage) -> Result<Run> {
    let config = RunConfig {
        stages: StageFlags::through(last),
        ..RunConfig::small()
    };
    let dir = out_dir("run");
    let manifest = pipeline_run(&dir, &config)?;
    for s in &manifest.stages {
        eprintln!("[{}] {:.1}s", s.stage, s.finished_unix - s.started_unix);
    }
    Ok(Run::new(dir, config))
}
