#![allow(dead_code)]

use rand::Rng as _;
use reaction_forge::tracker::{Demo, Role, Trajectory};
use reaction_forge_nn::{rng_from_seed, Matrix, Rng};
use reaction_forge_sim::{Action, CharacterSpec, CharacterState, Simulator};

/// Standing pose after the PD controller has held it for a while.
pub fn settled(spec: &CharacterSpec, x: f64) -> CharacterState {
    let mut s = CharacterState::rest(spec, [x, 0.0]);
    s.q[5] = 0.25;
    s.q[7] = -0.25;
    s.root_pos[1] = 0.9 * 0.25f64.cos() + spec.links[7].radius;
    let mut sim = Simulator::new(spec.clone()).unwrap();
    let a = Action(s.q.clone());
    for _ in 0..200 {
        s = sim.step_pd(&s, &a, &[]).unwrap().0;
    }
    s
}

/// Closed-loop PD run towards slowly waving upper-body targets.
pub fn waving(spec: &CharacterSpec, start: CharacterState, len: usize, phase: f64, role: Role, source: usize) -> Trajectory {
    let mut sim = Simulator::new(spec.clone()).unwrap();
    let base = start.q.clone();
    let mut states = vec![start];
    let mut actions = Vec::new();
    for t in 0..len - 1 {
        let w = 0.15 * t as f64 + phase;
        let mut q = base.clone();
        for (k, v) in q.iter_mut().enumerate().take(5) {
            *v += 0.4 * (w + k as f64).sin();
        }
        let a = Action(q).clamped(spec);
        let next = sim.step_pd(states.last().unwrap(), &a, &[]).unwrap().0;
        states.push(next);
        actions.push(a);
    }
    Trajectory {
        states,
        actions,
        fps: 30.0,
        source,
        role,
        mean_error: 0.0,
        max_drift: 0.0,
    }
}

/// Physically consistent two-character demos without a trained tracker.
pub fn demos(spec: &CharacterSpec, n: usize, len: usize) -> Vec<Demo> {
    let a0 = settled(spec, -0.6);
    let mut r0 = settled(spec, 0.6);
    r0.root_angle = a0.root_angle;
    (0..n)
        .map(|i| Demo {
            id: i,
            family: if i % 2 == 0 { "even" } else { "odd" }.into(),
            actor: waving(spec, a0.clone(), len, 0.7 * i as f64, Role::Actor, i),
            reactor: waving(spec, r0.clone(), len, 0.7 * i as f64 + 1.0, Role::Reactor, i),
        })
        .collect()
}

pub fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 - 1.0)
}

pub fn unit_rows(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut m = random(rows, cols, &mut rng_from_seed(seed));
    reaction_forge::batch::normalize_rows(&mut m);
    m
}

/// A run configuration that finishes end to end in seconds.
pub fn tiny_run() -> reaction_forge::pipeline::RunConfig {
    let mut c = reaction_forge::pipeline::RunConfig::small();
    c.synth.pairs = 16;
    c.synth.min_len = 40;
    c.synth.max_len = 50;
    c.tracker.hidden = vec![32];
    c.tracker.iterations = 2;
    c.tracker.retries = 2;
    c.tracker.ppo.horizon = 256;
    c.state_vae.hidden = vec![32];
    c.state_vae.epochs = 3;
    c.action_vae.hidden = vec![32];
    c.action_vae.epochs = 3;
    c.fdm.hidden = vec![32];
    c.fdm.epochs = 3;
    c.fdm.batch = 64;
    c.fdm.eval_batch = 8;
    c.fdm.eval_batches = 4;
    c.policy.hidden = vec![32];
    c.policy.epochs = 3;
    c.policy.batch = 64;
    c.igsl.k = 2;
    c.igsl.specialist_epochs = 1;
    c.igsl.distill_epochs = 1;
    c.eval.samples = 4;
    c.eval.repeats = 2;
    c.eval.encoder.window = 20;
    c.eval.encoder.hidden = 16;
    c.eval.encoder.dim = 8;
    c.eval.encoder.epochs = 2;
    c
}
