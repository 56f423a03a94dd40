use reaction_forge_sim::{energy, keypoints, Action, CharacterSpec, CharacterState, SimError, Simulator};

fn ballistic_spec(substeps: usize) -> CharacterSpec {
    let mut spec = CharacterSpec::single_link(0.4, 0.05, 2.0);
    spec.substeps = substeps;
    spec
}

#[test]
fn ballistic_step_matches_symplectic_euler_closed_form() {
    for substeps in [1, 8] {
        let spec = ballistic_spec(substeps);
        let mut sim = Simulator::new(spec.clone()).unwrap();
        let mut s = CharacterState::rest(&spec, [0.3, 50.0]);
        s.root_vel = [1.5, 2.0];
        s.root_angle = 0.4;
        let (next, report) = sim.step(&s, &[]).unwrap();
        let h = spec.substep_dt();
        let n = substeps as f64;
        let g = spec.gravity;
        for a in 0..2 {
            let v = s.root_vel[a] + n * h * g[a];
            let x = s.root_pos[a] + n * h * s.root_vel[a] + h * h * g[a] * n * (n + 1.0) / 2.0;
            assert!((next.root_vel[a] - v).abs() < 1e-9, "velocity axis {a}");
            assert!((next.root_pos[a] - x).abs() < 1e-9, "position axis {a}");
        }
        assert!((next.root_angle - 0.4).abs() < 1e-12);
        assert!(report.in_contact.iter().all(|c| !c));
    }
}

#[test]
fn capsule_resting_on_ground_stays_put() {
    let spec = CharacterSpec::single_link(0.6, 0.05, 3.0);
    let mut sim = Simulator::new(spec.clone()).unwrap();
    let start = CharacterState::rest(&spec, [0.0, 0.05]);
    let mut s = start.clone();
    for _ in 0..100 {
        s = sim.step(&s, &[]).unwrap().0;
        let d = ((s.root_pos[0] - start.root_pos[0]).powi(2) + (s.root_pos[1] - start.root_pos[1]).powi(2)).sqrt();
        assert!(d < 1e-6, "drifted {d}");
        assert!((s.root_angle - start.root_angle).abs() < 1e-6);
    }
}

#[test]
fn pendulum_energy_drift_below_one_percent() {
    let spec = CharacterSpec::pendulum(1.0, 1.0);
    assert_eq!(spec.substeps, 8);
    let mut sim = Simulator::new(spec.clone()).unwrap();
    let mut s = CharacterState::rest(&spec, [0.0, 0.0]);
    s.q[0] = 1.0;
    let e0 = energy(&spec, &s);
    // potential measured from the lowest point so the ratio is meaningful
    let lowest = {
        let bottom = CharacterState::rest(&spec, [0.0, 0.0]);
        energy(&spec, &bottom)
    };
    let scale = e0 - lowest;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        s = sim.step(&s, &[0.0]).unwrap().0;
        worst = worst.max((energy(&spec, &s) - e0).abs());
    }
    assert!(worst / scale < 0.01, "relative drift {}", worst / scale);
}

#[test]
fn stepping_is_bit_deterministic() {
    let spec = CharacterSpec::humanoid();
    let run = || {
        let mut sim = Simulator::new(spec.clone()).unwrap();
        let mut s = standing(&spec);
        let a = Action((0..9).map(|k| 0.05 * (k as f64).sin()).collect());
        for _ in 0..30 {
            s = sim.step_pd(&s, &a, &[]).unwrap().0;
        }
        s.to_vec()
    };
    let (x, y) = (run(), run());
    assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
}

fn standing(spec: &CharacterSpec) -> CharacterState {
    let mut s = CharacterState::rest(spec, [0.0, 0.0]);
    s.q[5] = 0.25;
    s.q[7] = -0.25;
    s.root_pos[1] = 0.9 * 0.25f64.cos() + spec.links[7].radius;
    s
}

#[test]
fn pd_standing_pose_holds_and_never_sinks() {
    let spec = CharacterSpec::humanoid();
    let mut sim = Simulator::new(spec.clone()).unwrap();
    let mut s = standing(&spec);
    let a = Action(s.q.clone());
    for _ in 0..300 {
        let (next, report) = sim.step_pd(&s, &a, &[]).unwrap();
        assert!(report.max_ground_depth() <= 1e-3);
        s = next;
    }
    assert!((s.root_pos[1] - standing(&spec).root_pos[1]).abs() < 0.05, "root height {}", s.root_pos[1]);
    assert!(s.root_angle.abs() < 0.1);
}

#[test]
fn dropped_humanoid_never_penetrates_ground() {
    let spec = CharacterSpec::humanoid();
    let mut sim = Simulator::new(spec.clone()).unwrap();
    let mut s = CharacterState::rest(&spec, [0.0, 1.5]);
    s.root_angle = 0.7;
    s.root_vel = [1.0, -2.0];
    let a = Action(vec![0.5, -1.0, 1.0, 2.0, -0.5, 1.5, -2.0, -1.0, 2.0]);
    for _ in 0..200 {
        let (next, report) = sim.step_pd(&s, &a, &[]).unwrap();
        assert!(report.max_ground_depth() <= 1e-3);
        s = next;
    }
    let (pos, _) = keypoints(&spec, &s);
    assert!(pos.iter().all(|p| p[1] > -1e-3));
}

#[test]
fn blowup_reports_step_index() {
    let spec = ballistic_spec(8);
    let mut sim = Simulator::new(spec.clone()).unwrap();
    let mut s = CharacterState::rest(&spec, [0.0, 10.0]);
    s = sim.step(&s, &[]).unwrap().0;
    s.root_vel[0] = f64::NAN;
    match sim.step(&s, &[]) {
        Err(SimError::Blowup { step }) => assert_eq!(step, 1),
        other => panic!("expected blowup, got {other:?}"),
    }
}
