use reaction_forge::features::{tracker_feature_len, Standardizer};
use reaction_forge::motion::{InteractionPair, MotionSequence};
use reaction_forge::ppo::{gae, ppo_update, PpoConfig, Transition};
use reaction_forge::tracker::{
    curate, imitation_reward, replay_error, track_sequence, RewardConfig, Role, TrackerConfig, TrackerPolicy,
};
use reaction_forge_nn::{rng_from_seed, Adam, AdamConfig, Matrix, Tape};
use reaction_forge_sim::{keypoints, Action, CharacterSpec, CharacterState, Simulator};

fn settled(spec: &CharacterSpec) -> CharacterState {
    let mut s = CharacterState::rest(spec, [0.0, 0.0]);
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

fn fresh_policy(spec: &CharacterSpec, seed: u64) -> TrackerPolicy {
    let input = Standardizer::identity(tracker_feature_len(spec));
    TrackerPolicy::new(spec, &[32, 32], 0.05f64.ln(), input, &mut rng_from_seed(seed))
}

fn seq(states: Vec<CharacterState>) -> MotionSequence {
    MotionSequence {
        fps: 30.0,
        family: "scripted".into(),
        states,
    }
}

#[test]
fn perfect_match_earns_full_reward() {
    let spec = CharacterSpec::humanoid();
    let s = settled(&spec);
    let r = imitation_reward(&spec, &s, &s, &RewardConfig::default());
    assert!((r - 1.0).abs() < 1e-12);
}

#[test]
fn velocity_only_error_matches_closed_form() {
    let spec = CharacterSpec::humanoid();
    let s = settled(&spec);
    let mut moved = s.clone();
    let dv = 0.3;
    moved.root_vel[0] += dv;
    // a uniform root velocity offset shifts every keypoint velocity by dv
    let k = keypoints(&spec, &s).0.len() as f64;
    let e = k * dv * dv;
    let r = imitation_reward(&spec, &s, &moved, &RewardConfig::default());
    assert!((r - (0.7 + 0.3 * (-0.1 * e).exp())).abs() < 1e-9, "{r}");
}

#[test]
fn far_off_pose_earns_almost_nothing() {
    let spec = CharacterSpec::humanoid();
    let s = settled(&spec);
    let mut far = s.clone();
    far.root_pos[0] += 100.0;
    far.root_vel[0] += 1000.0;
    assert!(imitation_reward(&spec, &s, &far, &RewardConfig::default()) < 1e-12);
}

#[test]
fn single_transition_clipped_surrogate() {
    // rho = 1.5, clip 0.2
    for (adv, value, grad) in [(2.0, -2.4, 0.0), (-2.0, 3.0, 3.0)] {
        let mut tape = Tape::new();
        let lp = tape.param(Matrix::from_elem((1, 1), 1.5f64.ln()));
        let loss = tape.ppo_clip(lp, vec![0.0], vec![adv], 0.2).unwrap();
        assert!((tape.scalar(loss) - value).abs() < 1e-12);
        let g = tape.backward(loss).unwrap().collect(&[lp]);
        assert!((g[0][[0, 0]] - grad).abs() < 1e-12, "adv {adv}: {}", g[0][[0, 0]]);
    }
}

#[test]
fn gae_single_step_and_segment_reset() {
    let step = |reward, value, next_value, end| Transition {
        obs: vec![0.0],
        action: vec![0.0],
        log_prob: 0.0,
        reward,
        value,
        next_value,
        end,
    };
    let (adv, ret) = gae(&[step(1.0, 0.5, 2.0, true)], 0.9, 0.95);
    assert!((adv[0] - (1.0 + 0.9 * 2.0 - 0.5)).abs() < 1e-12);
    assert!((ret[0] - (adv[0] + 0.5)).abs() < 1e-12);
    // the first segment must not see the second one
    let (adv, _) = gae(&[step(1.0, 0.0, 0.0, true), step(5.0, 0.0, 0.0, true)], 0.9, 0.95);
    assert!((adv[0] - 1.0).abs() < 1e-12);
    let (adv, _) = gae(&[step(1.0, 0.0, 0.0, false), step(5.0, 0.0, 0.0, true)], 0.5, 0.5);
    assert!((adv[0] - (1.0 + 0.25 * 5.0)).abs() < 1e-12);
}

fn zero_batch(obs_dim: usize, act_dim: usize, n: usize, reward: f64) -> Vec<Transition> {
    (0..n)
        .map(|i| Transition {
            obs: vec![0.1 * i as f64; obs_dim],
            action: vec![0.01; act_dim],
            log_prob: -1.0,
            reward,
            value: 0.0,
            next_value: 0.0,
            end: i + 1 == n,
        })
        .collect()
}

#[test]
fn zero_advantage_leaves_the_policy_unchanged() {
    let spec = CharacterSpec::humanoid();
    let mut p = fresh_policy(&spec, 1);
    let before = p.head.clone();
    let d = tracker_feature_len(&spec);
    let steps = zero_batch(d, spec.num_joints(), 16, 0.0);
    let mut po = Adam::new(AdamConfig::with_lr(1e-2), &reaction_forge_nn::Module::parameters(&p.head));
    let mut vo = Adam::new(AdamConfig::with_lr(1e-3), &reaction_forge_nn::Module::parameters(&p.value));
    let cfg = PpoConfig {
        minibatch: 8,
        ..Default::default()
    };
    let stats = ppo_update(&mut p.head, &mut p.value, &mut po, &mut vo, &steps, &cfg, &mut rng_from_seed(0)).unwrap();
    assert!(stats.rejected.is_none());
    assert_eq!(p.head, before);
}

#[test]
fn non_finite_advantage_rejects_the_batch() {
    let spec = CharacterSpec::humanoid();
    let mut p = fresh_policy(&spec, 2);
    let before = p.clone();
    let steps = zero_batch(tracker_feature_len(&spec), spec.num_joints(), 4, f64::NAN);
    let mut po = Adam::new(AdamConfig::with_lr(1e-2), &reaction_forge_nn::Module::parameters(&p.head));
    let mut vo = Adam::new(AdamConfig::with_lr(1e-3), &reaction_forge_nn::Module::parameters(&p.value));
    let stats = ppo_update(&mut p.head, &mut p.value, &mut po, &mut vo, &steps, &PpoConfig::default(), &mut rng_from_seed(0)).unwrap();
    assert!(stats.rejected.unwrap().contains("non-finite"));
    assert_eq!(p, before);
}

#[test]
fn ppo_config_rejects_bad_discount_and_clip() {
    assert!(PpoConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
    assert!(PpoConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
    assert!(PpoConfig { clip: 0.0, ..Default::default() }.validate().is_err());
    assert!(PpoConfig::default().validate().is_ok());
}

#[test]
fn stationary_reference_succeeds_first_time() {
    let spec = CharacterSpec::humanoid();
    let s = settled(&spec);
    let reference = seq(vec![s; 40]);
    let out = track_sequence(&spec, &fresh_policy(&spec, 3), &reference, 0, Role::Actor, &TrackerConfig::default(), 7).unwrap();
    assert_eq!(out.attempts.len(), 1);
    let traj = out.trajectory.unwrap();
    assert!(traj.mean_error < 0.01, "error {}", traj.mean_error);
    assert_eq!(traj.actions.len(), traj.states.len() - 1);
    assert!(replay_error(&spec, &traj).unwrap() <= 1e-6);
}

#[test]
fn teleporting_reference_always_fails() {
    let spec = CharacterSpec::humanoid();
    let s = settled(&spec);
    let states = (0..30)
        .map(|t| {
            let mut x = s.clone();
            x.root_pos[0] = if t % 2 == 0 { 0.0 } else { 5.0 };
            x
        })
        .collect();
    let out = track_sequence(&spec, &fresh_policy(&spec, 3), &seq(states), 0, Role::Actor, &TrackerConfig::default(), 7).unwrap();
    assert!(out.trajectory.is_none());
    assert_eq!(out.attempts.len(), 10);
    assert!(out.attempts.iter().all(|a| !a.success && a.score >= 1.0));
}

fn mixed_corpus(spec: &CharacterSpec) -> Vec<InteractionPair> {
    let s = settled(spec);
    let still = seq(vec![s.clone(); 30]);
    let mut jumpy = still.clone();
    for (t, x) in jumpy.states.iter_mut().enumerate() {
        x.root_pos[0] += if t % 2 == 0 { 0.0 } else { 3.0 };
    }
    let mut other = still.clone();
    other.family = "other".into();
    vec![
        InteractionPair::new(0, still.clone(), still.clone()).unwrap(),
        InteractionPair::new(1, still.clone(), jumpy.clone()).unwrap(),
        InteractionPair::new(2, jumpy, still.clone()).unwrap(),
        InteractionPair::new(3, other.clone(), other).unwrap(),
    ]
}

#[test]
fn curation_needs_both_characters_and_report_matches_recount() {
    let spec = CharacterSpec::humanoid();
    let corpus = mixed_corpus(&spec);
    let config = TrackerConfig {
        retries: 3,
        ..Default::default()
    };
    let (demos, report) = curate(&spec, &fresh_policy(&spec, 4), &corpus, &config, 11).unwrap();
    let ids: Vec<usize> = demos.iter().map(|d| d.id).collect();
    assert_eq!(ids, vec![0, 3]);
    assert!(demos.len() <= corpus.len());

    let succeeded = |a: &[reaction_forge::tracker::Attempt]| a.last().is_some_and(|x| x.success);
    let recount = report.log.iter().filter(|l| succeeded(&l.actor) && succeeded(&l.reactor)).count();
    assert_eq!(report.accepted, recount);
    assert_eq!(report.pairs, corpus.len());
    assert!((report.success_rate - recount as f64 / corpus.len() as f64).abs() < 1e-12);
    assert_eq!(report.per_family["scripted"].pairs, 3);
    assert_eq!(report.per_family["scripted"].succeeded, 1);
    assert_eq!(report.per_family["other"].succeeded, 1);
    for d in &demos {
        assert!(replay_error(&spec, &d.actor).unwrap() <= 1e-6);
        assert!(replay_error(&spec, &d.reactor).unwrap() <= 1e-6);
    }
}

#[test]
fn all_failures_is_an_empty_demo_set_error() {
    let spec = CharacterSpec::humanoid();
    let corpus: Vec<_> = mixed_corpus(&spec).into_iter().filter(|p| p.id == 1 || p.id == 2).collect();
    let config = TrackerConfig {
        retries: 2,
        ..Default::default()
    };
    let err = curate(&spec, &fresh_policy(&spec, 4), &corpus, &config, 11).unwrap_err();
    assert!(matches!(err, reaction_forge::error::ForgeError::EmptyDemoSet));
}

#[test]
fn success_is_monotone_in_retries_and_keeps_the_best_attempt() {
    let spec = CharacterSpec::humanoid();
    let corpus = reaction_forge::synth::synth_interactions(
        &spec,
        &reaction_forge::synth::SynthConfig {
            pairs: 6,
            min_len: 20,
            max_len: 40,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    let policy = fresh_policy(&spec, 5);
    for p in &corpus {
        let mut prev = false;
        for k in 1..=4 {
            let config = TrackerConfig {
                retries: k,
                success_error: 0.2,
                ..Default::default()
            };
            let out = track_sequence(&spec, &policy, &p.reactor, p.id, Role::Reactor, &config, 9).unwrap();
            let ok = out.trajectory.is_some();
            assert!(ok || !prev, "pair {} lost success at k={k}", p.id);
            prev = ok;
            if ok {
                let kept = out.attempts.last().unwrap().score;
                assert!(out.attempts.iter().all(|a| kept <= a.score));
            }
        }
    }
}
