mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use reaction_forge::batch::{gather, normalize, parameter_digest};
use reaction_forge::dynamics::{
    contrastive_tape, fdm_contrastive_loss, latent_tuples, ranked_first, retrieval_accuracy, train_fdm, FdmConfig,
    ForwardDynamicsModel, LatentTuples,
};
use reaction_forge::representation::{action_rows, state_rows, train_vae, LatentKind, VaeConfig};
use reaction_forge_nn::{check_gradients, rng_from_seed, Activation, Matrix, Mlp, Module, OutputActivation};
use reaction_forge_sim::CharacterSpec;

use common::{random, unit_rows};

fn basis(rows: &[usize], dim: usize) -> Matrix {
    Matrix::from_shape_fn((rows.len(), dim), |(i, k)| if rows[i] == k { 1.0 } else { 0.0 })
}

#[test]
fn identical_latents_give_log_three() {
    let v = basis(&[0, 0], 3);
    let l = fdm_contrastive_loss(&v, &v, &v, 0.07, false).unwrap();
    assert!((l - 3f64.ln()).abs() < 1e-9, "{l}");
}

#[test]
fn orthogonal_negatives_at_unit_temperature() {
    let pred = basis(&[0, 1], 4);
    let next = basis(&[0, 1], 4);
    // row 0's negative current must be orthogonal to e0 and row 1's to e1
    let current = basis(&[3, 2], 4);
    let l = fdm_contrastive_loss(&pred, &current, &next, 1.0, false).unwrap();
    assert!((l - (1.0 + 2.0 * (-1f64).exp()).ln()).abs() < 1e-9, "{l}");
}

#[test]
fn literal_denominator_drops_the_positive() {
    let v = basis(&[0, 0], 3);
    let l = fdm_contrastive_loss(&v, &v, &v, 0.07, true).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-9);
}

#[test]
fn equal_similarities_give_log_two_n_minus_one() {
    for n in [2usize, 3, 5, 8] {
        let v = basis(&vec![1; n], 4);
        let l = fdm_contrastive_loss(&v, &v, &v, 0.3, false).unwrap();
        assert!((l - ((2 * n - 1) as f64).ln()).abs() < 1e-9);
    }
}

#[test]
fn small_temperature_with_a_clear_positive_goes_to_zero() {
    let pred = basis(&[0, 1], 4);
    let l = fdm_contrastive_loss(&pred, &basis(&[3, 2], 4), &pred, 1e-3, false).unwrap();
    assert!(l < 1e-12);
}

#[test]
fn single_row_is_a_contract_error() {
    let v = basis(&[0], 2);
    assert!(fdm_contrastive_loss(&v, &v, &v, 0.07, false).is_err());
}

proptest! {
    #[test]
    fn loss_is_nonnegative_and_permutation_invariant(seed in 0u64..500, n in 2usize..7, tau in 0.05f64..2.0) {
        let pred = unit_rows(n, 5, seed);
        let cur = unit_rows(n, 5, seed + 1000);
        let next = unit_rows(n, 5, seed + 2000);
        let l = fdm_contrastive_loss(&pred, &cur, &next, tau, false).unwrap();
        prop_assert!(l >= 0.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng_from_seed(seed));
        let lp = fdm_contrastive_loss(&gather(&pred, &perm), &gather(&cur, &perm), &gather(&next, &perm), tau, false).unwrap();
        prop_assert!((l - lp).abs() < 1e-9);
    }
}

#[test]
fn fdm_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = rng_from_seed(seed);
        let fdm = ForwardDynamicsModel::new(3, 2, &[6], &mut rng);
        let (zs, za, zn) = (unit_rows(4, 3, seed + 1), random(4, 2, &mut rng), unit_rows(4, 3, seed + 2));
        let params: Vec<Matrix> = fdm.parameters().into_iter().cloned().collect();
        let check = check_gradients(&params, 1e-5, |tape, vars| {
            let s = tape.constant(zs.clone());
            let a = tape.constant(za.clone());
            let n = tape.constant(zn.clone());
            let pred = fdm.forward_tape(tape, vars, s, a).unwrap();
            Ok(contrastive_tape(tape, pred, s, n, 0.5, false).unwrap())
        })
        .unwrap();
        assert!(check.max_relative_error() < 1e-4, "seed {seed}: {check:?}");
    }
}

#[test]
fn forward_is_unit_norm_and_deterministic() {
    let fdm = ForwardDynamicsModel::new(4, 3, &[8], &mut rng_from_seed(2));
    let y = fdm.forward(&[0.5, 0.5, 0.5, 0.5], &[1.0, -1.0, 0.2]).unwrap();
    assert!((y.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(y, fdm.forward(&[0.5, 0.5, 0.5, 0.5], &[1.0, -1.0, 0.2]).unwrap());
}

#[test]
fn hand_fixed_single_layer_model() {
    let mut net = Mlp::zeros(&[3, 2], Activation::Tanh, OutputActivation::Identity);
    net.layers[0].w = Matrix::from_shape_vec((2, 3), vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    net.layers[0].b = Matrix::from_shape_vec((1, 2), vec![0.0, 0.5]).unwrap();
    let fdm = ForwardDynamicsModel { net };
    // raw output (0.6 + 0.2, 0.8 + 0.5)
    let y = fdm.forward(&[0.6, 0.8], &[0.2]).unwrap();
    let norm = (0.8f64 * 0.8 + 1.3 * 1.3).sqrt();
    assert!((y[0] - 0.8 / norm).abs() < 1e-12);
    assert!((y[1] - 1.3 / norm).abs() < 1e-12);
}

#[test]
fn untrained_model_retrieves_at_chance() {
    let n = 8;
    let batches = 600;
    let mut hits = 0.0;
    for b in 0..batches {
        let fdm = ForwardDynamicsModel::new(6, 3, &[16], &mut rng_from_seed(b));
        let tuples = LatentTuples {
            current: unit_rows(n, 6, 10_000 + b),
            action: random(n, 3, &mut rng_from_seed(20_000 + b)),
            next: unit_rows(n, 6, 30_000 + b),
            origin: (0..n).map(|i| (i, 0)).collect(),
        };
        hits += retrieval_accuracy(&fdm, &tuples).unwrap();
    }
    let acc = hits / batches as f64;
    let chance = 1.0 / (2 * n - 1) as f64;
    assert!((acc - chance).abs() < 0.02, "accuracy {acc} vs chance {chance}");
}

#[test]
fn copy_oracle_on_identity_task_is_perfect() {
    let mut net = Mlp::zeros(&[8, 5], Activation::Tanh, OutputActivation::Identity);
    for k in 0..5 {
        net.layers[0].w[[k, k]] = 1.0;
    }
    let fdm = ForwardDynamicsModel { net };
    let z = unit_rows(32, 5, 4);
    let tuples = LatentTuples {
        current: z.clone(),
        action: random(32, 3, &mut rng_from_seed(5)),
        next: z,
        origin: (0..32).map(|i| (i, 0)).collect(),
    };
    assert_eq!(retrieval_accuracy(&fdm, &tuples).unwrap(), 1.0);
}

#[test]
fn ranked_first_counts_ties_as_misses() {
    let v = basis(&[0, 0], 2);
    assert_eq!(ranked_first(&v, &v, &v), 0.0);
}

/// Next latent is a fixed rotation-like map of the current one plus the action.
fn synthetic_tuples(n: usize, seed: u64) -> LatentTuples {
    let current = unit_rows(n, 6, seed);
    let action = random(n, 3, &mut rng_from_seed(seed + 1));
    let mut next = Matrix::zeros((n, 6));
    for i in 0..n {
        let c = current.row(i);
        let a = action.row(i);
        let raw: Vec<f64> = (0..6).map(|k| c[(k + 1) % 6] + 0.5 * a[k % 3]).collect();
        next.row_mut(i).assign(&ndarray::ArrayView1::from(&normalize(&raw)));
    }
    LatentTuples {
        current,
        action,
        next,
        origin: (0..n).map(|i| (i, 0)).collect(),
    }
}

#[test]
fn training_lowers_loss_and_is_reproducible() {
    let train = synthetic_tuples(2048, 1);
    let eval = synthetic_tuples(256, 2);
    let config = FdmConfig {
        hidden: vec![64],
        epochs: 10,
        batch: 128,
        ..Default::default()
    };
    let (fdm, curve) = train_fdm(&train, &eval, &config, 3).unwrap();
    assert!(curve[9].loss < curve[0].loss);
    assert!(curve[9].retrieval > curve[0].retrieval);
    assert!(curve[9].retrieval > 0.8, "{}", curve[9].retrieval);
    let (again, _) = train_fdm(&train, &eval, &config, 3).unwrap();
    assert_eq!(again, fdm);
}

#[test]
fn encoders_are_untouched_by_fdm_training() {
    let spec = CharacterSpec::humanoid();
    let demos = common::demos(&spec, 4, 30);
    let small = VaeConfig {
        epochs: 2,
        hidden: vec![16],
        ..VaeConfig::state()
    };
    let (svae, _) = train_vae(&state_rows(&spec, &demos), LatentKind::State, &small, 1).unwrap();
    let (avae, _) = train_vae(&action_rows(&spec, &demos), LatentKind::Action, &VaeConfig { latent: 4, ..small }, 1).unwrap();
    let before = (parameter_digest(&svae), parameter_digest(&avae));
    let tuples = latent_tuples(&spec, &demos, &svae, &avae).unwrap();
    assert_eq!(tuples.len(), 4 * 2 * 29);
    let config = FdmConfig {
        hidden: vec![16],
        epochs: 2,
        batch: 32,
        eval_batch: 16,
        ..Default::default()
    };
    train_fdm(&tuples, &tuples, &config, 2).unwrap();
    assert_eq!(before, (parameter_digest(&svae), parameter_digest(&avae)));
}
