//! Closed-loop reaction to an actor that is generated on the fly, one frame
//! at a time, instead of replayed from a file.

use reaction_forge::imitation::{rollout_online, ActorStream};
use reaction_forge::pipeline::Stage;
use reaction_forge::render::render_frames;
use reaction_forge::motion::InteractionPair;
use reaction_forge::synth::SHOULDER_R;
use reaction_forge_nn::{rng_from_seed, SampleMode};
use reaction_forge_sim::CharacterState;

mod common;

/// Holds a recorded pose and waves the right arm.
struct Waving {
    base: CharacterState,
    t: usize,
    len: usize,
    fps: f64,
}

impl ActorStream for Waving {
    fn next_frame(&mut self) -> Option<CharacterState> {
        if self.t >= self.len {
            return None;
        }
        let mut s = self.base.clone();
        let phase = self.t as f64 / self.fps * std::f64::consts::TAU * 0.8;
        s.q[SHOULDER_R] += 1.2 * phase.sin();
        s.qd[SHOULDER_R] = 1.2 * phase.cos() * std::f64::consts::TAU * 0.8;
        self.t += 1;
        Some(s)
    }
}

fn main() -> reaction_forge::error::Result<()> {
    let run = common::run_through(Stage::TrainPolicy)?;
    let test = run.test_corpus()?;
    let pair = &test[0];
    let policy = run.final_policy()?;
    let fps = pair.fps();

    let mut stream = Waving {
        base: pair.actor.states[0].clone(),
        t: 0,
        len: 90,
        fps,
    };
    let out = rollout_online(
        &run.spec,
        &policy,
        &mut stream,
        pair.reactor.states[0].clone(),
        SampleMode::Deterministic,
        &mut rng_from_seed(0),
        None,
        fps,
    )?;
    let lat = out.latency();
    println!("{} ticks, ended by {:?}", out.reactor.len(), out.end);
    println!("latency mean {:.3} ms, p99 {:.3} ms, max {:.3} ms", lat.mean_ms, lat.p99_ms, lat.max_ms);

    let dir = common::out_dir("rollout").join("frames");
    let n = render_frames(&run.spec, &InteractionPair::new(0, out.actor, out.reactor)?, &dir)?;
    println!("{n} svg frames in {}", dir.display());
    Ok(())
}
