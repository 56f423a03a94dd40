//! End-to-end run of the small preset with optional dotted overrides, e.g.
//!
//!     cargo run --release --example pipeline -- /tmp/run policy.epochs=20

use std::path::PathBuf;

use reaction_forge::pipeline::{override_key, pipeline_run, RunConfig};

fn main() -> reaction_forge::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("reaction-forge-pipeline"));
    let overrides: Vec<String> = args.collect();
    let config = if overrides.is_empty() {
        RunConfig::small()
    } else {
        let mut base = serde_json::to_value(RunConfig::small())?;
        for kv in &overrides {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            override_key(&mut base, k, v)?;
        }
        RunConfig::from_json(&base.to_string())?
    };

    let start = std::time::Instant::now();
    let manifest = pipeline_run(&dir, &config)?;
    for s in &manifest.stages {
        println!("{:<13} {:>6.1}s  {}", s.stage, s.finished_unix - s.started_unix, s.summary);
    }
    println!("config {} finished in {:.1}s, artifacts in {}", &manifest.config_hash[..12], start.elapsed().as_secs_f64(), dir.display());
    Ok(())
}
