use ndarray::Array2;
use rand::Rng as _;
use reaction_forge_nn::{
    check_gradients, rng_from_seed, Activation, Matrix, Mlp, Module, OutputActivation, Rng,
};

const INSTANCES: u64 = 20;
const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 - 1.0)
}

#[test]
fn mlp_regression_loss() {
    for seed in 0..INSTANCES {
        let mut rng = rng_from_seed(seed);
        let net = Mlp::new(&[3, 5, 4, 2], Activation::Tanh, OutputActivation::Tanh, &mut rng);
        let x = random(4, 3, &mut rng);
        let target = random(4, 2, &mut rng);
        let params: Vec<Matrix> = net.parameters().into_iter().cloned().collect();
        let mut inputs = params.clone();
        inputs.push(x);
        let check = check_gradients(&inputs, H, |tape, vars| {
            let n = vars.len();
            let y = net.forward_tape(tape, &vars[..n - 1], vars[n - 1])?;
            let t = tape.constant(target.clone());
            let d = tape.sub(y, t)?;
            let sq = tape.square(d);
            Ok(tape.mean(sq))
        })
        .unwrap();
        assert!(check.max_relative_error() < TOL, "seed {seed}: {:?}", check);
    }
}

#[test]
fn relu_network_away_from_kinks() {
    for seed in 0..INSTANCES {
        let mut rng = rng_from_seed(100 + seed);
        let net = Mlp::new(&[2, 6, 1], Activation::Relu, OutputActivation::Identity, &mut rng);
        let x = random(3, 2, &mut rng);
        // skip instances with a pre-activation within the probe distance of 0
        let pre = x.dot(&net.layers[0].w.t()) + &net.layers[0].b;
        if pre.iter().any(|v| v.abs() < 1e-2) {
            continue;
        }
        let params: Vec<Matrix> = net.parameters().into_iter().cloned().collect();
        let check = check_gradients(&params, H, |tape, vars| {
            let xv = tape.constant(x.clone());
            let y = net.forward_tape(tape, vars, xv)?;
            let sq = tape.square(y);
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(check.max_relative_error() < TOL, "seed {seed}: {:?}", check);
    }
}

#[test]
fn cosine_info_nce() {
    for seed in 0..INSTANCES {
        let mut rng = rng_from_seed(200 + seed);
        let n = 4;
        let a = random(n, 3, &mut rng);
        let b = random(n, 3, &mut rng);
        let mut member = Array2::from_elem((n, 2 * n), true);
        for i in 0..n {
            member[[i, n + i]] = false;
        }
        let check = check_gradients(&[a, b], H, |tape, vars| {
            let an = tape.row_normalize(vars[0]);
            let bn = tape.row_normalize(vars[1]);
            let s1 = tape.matmul_nt(an, bn)?;
            let s2 = tape.matmul_nt(an, an)?;
            let logits = tape.concat(&[s1, s2])?;
            let logits = tape.scale(logits, 1.0 / 0.5);
            tape.info_nce(logits, (0..n).collect(), member.clone())
        })
        .unwrap();
        assert!(check.max_relative_error() < TOL, "seed {seed}: {:?}", check);
    }
}

#[test]
fn gaussian_log_prob_and_ppo_clip() {
    for seed in 0..INSTANCES {
        let mut rng = rng_from_seed(300 + seed);
        let n = 5;
        let mean = random(n, 3, &mut rng);
        let log_std = random(1, 3, &mut rng) * 0.5;
        let actions = random(n, 3, &mut rng);
        let advantages: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        // old log-probs near the current ones keep ratios away from the clip kinks
        let mut tape = reaction_forge_nn::Tape::new();
        let m = tape.constant(mean.clone());
        let s = tape.constant(log_std.clone());
        let lp = tape.gaussian_log_prob(m, s, actions.clone()).unwrap();
        let old: Vec<f64> = (0..n)
            .map(|i| tape.value(lp)[[i, 0]] + 0.05 * (rng.random::<f64>() - 0.5))
            .collect();
        let check = check_gradients(&[mean, log_std], H, |tape, vars| {
            let lp = tape.gaussian_log_prob(vars[0], vars[1], actions.clone())?;
            tape.ppo_clip(lp, old.clone(), advantages.clone(), 0.2)
        })
        .unwrap();
        assert!(check.max_relative_error() < TOL, "seed {seed}: {:?}", check);
    }
}

#[test]
fn elementwise_ops_and_slicing() {
    for seed in 0..INSTANCES {
        let mut rng = rng_from_seed(400 + seed);
        let a = random(3, 4, &mut rng);
        let b = random(3, 4, &mut rng);
        let row = random(1, 2, &mut rng);
        let check = check_gradients(&[a, b, row], H, |tape, vars| {
            let p = tape.mul(vars[0], vars[1])?;
            let e = tape.exp(p);
            let s = tape.slice_cols(e, 1, 3)?;
            let r = tape.add_row(s, vars[2])?;
            let sc = tape.add_scalar(r, 0.3);
            let rows = tape.sum_cols(sc);
            let sq = tape.square(rows);
            Ok(tape.mean(sq))
        })
        .unwrap();
        assert!(check.max_relative_error() < TOL, "seed {seed}: {:?}", check);
    }
}
