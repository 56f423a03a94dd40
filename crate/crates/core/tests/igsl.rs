mod common;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use reaction_forge::batch::{normalize, parameter_digest};
use reaction_forge::dynamics::{latent_tuples, train_fdm, FdmConfig};
use reaction_forge::igsl::{
    adjusted_rand_index, distill, embed_and_cluster, embed_demos, igsl_loop, kmeans, relabel, specialize,
    ClusterAssignment, IgslConfig, IgslModels, Pooling,
};
use reaction_forge::imitation::{
    evaluate_losses, imitation_data, imitation_loss_tape, ActionLoss, new_policy, train_policy, FrozenModels, ImitationData, PolicyConfig,
};
use reaction_forge::representation::{action_rows, state_rows, train_vae, LatentKind, Vae, VaeConfig};
use reaction_forge::tracker::Demo;
use reaction_forge_nn::{rng_from_seed, Module, Tape};
use reaction_forge_sim::CharacterSpec;

fn blobs(per: usize, centers: &[[f64; 3]], seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            points.push(center.iter().map(|m| m + noise.sample(&mut rng)).collect());
            truth.push(c);
        }
    }
    (points, truth)
}

#[test]
fn single_cluster_centroid_is_the_mean() {
    let mut rng = rng_from_seed(3);
    let points: Vec<Vec<f64>> = (0..25).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
    let a = kmeans(&points, 1, 0).unwrap();
    assert!(a.labels.iter().all(|&l| l == 0));
    for k in 0..4 {
        let mean = points.iter().map(|p| p[k]).sum::<f64>() / 25.0;
        assert!((a.centroids[0][k] - mean).abs() < 1e-12);
    }
}

#[test]
fn separated_families_are_recovered() {
    let (points, truth) = blobs(20, &[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]], 1);
    let a = kmeans(&points, 2, 7).unwrap();
    assert!(adjusted_rand_index(&a.labels, &truth) >= 0.9);
    let (points, truth) = blobs(15, &[[0.0, 0.0, 0.0], [4.0, 4.0, 0.0], [0.0, 4.0, 4.0]], 2);
    let a = kmeans(&points, 3, 1).unwrap();
    assert!(adjusted_rand_index(&a.labels, &truth) >= 0.9);
}

#[test]
fn adjusted_rand_index_by_hand() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
    // contingency [[1,1],[1,1]]: index 0, expected 2·2/6
    let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
    assert!((v - (0.0 - 2.0 / 3.0) / (2.0 - 2.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn kmeans_is_seeded_and_partitions() {
    let (points, _) = blobs(10, &[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [3.0, 0.0, 1.0]], 4);
    let a = kmeans(&points, 4, 11).unwrap();
    assert_eq!(a, kmeans(&points, 4, 11).unwrap());
    assert_eq!(a.labels.len(), points.len());
    assert!(a.labels.iter().all(|&l| l < 4));
    assert_eq!(a.sizes().iter().sum::<usize>(), points.len());
    let mut all: Vec<usize> = (0..4).flat_map(|c| a.members(c)).collect();
    all.sort();
    assert_eq!(all, (0..points.len()).collect::<Vec<_>>());
    assert!(kmeans(&points, 31, 0).is_err());
    assert!(kmeans(&points, 0, 0).is_err());
}

struct Models {
    demos: Vec<Demo>,
    svae: Vae,
    avae: Vae,
    frozen: FrozenModels,
    data: ImitationData,
}

fn models(spec: &CharacterSpec) -> Models {
    let demos = common::demos(spec, 6, 40);
    let small = VaeConfig {
        epochs: 5,
        hidden: vec![32],
        latent: 8,
        ..VaeConfig::state()
    };
    let (svae, _) = train_vae(&state_rows(spec, &demos), LatentKind::State, &small, 1).unwrap();
    let (avae, _) = train_vae(&action_rows(spec, &demos), LatentKind::Action, &VaeConfig { latent: 4, ..small }, 1).unwrap();
    let tuples = latent_tuples(spec, &demos, &svae, &avae).unwrap();
    let fcfg = FdmConfig {
        hidden: vec![32],
        epochs: 5,
        batch: 64,
        eval_batch: 16,
        ..Default::default()
    };
    let (fdm, _) = train_fdm(&tuples, &tuples, &fcfg, 2).unwrap();
    let data = imitation_data(spec, &demos, &svae, &avae).unwrap();
    Models {
        frozen: FrozenModels::new(&avae, &fdm),
        demos,
        svae,
        avae,
        data,
    }
}

fn policy_config() -> PolicyConfig {
    PolicyConfig {
        hidden: vec![32],
        batch: 64,
        epochs: 4,
        lr: 1e-3,
        ..Default::default()
    }
}

#[test]
fn demo_embeddings_cluster_into_a_partition() {
    let spec = CharacterSpec::humanoid();
    let m = models(&spec);
    let emb = embed_demos(&spec, &m.demos, &m.svae, Pooling::Mean).unwrap();
    assert_eq!(emb.len(), 6);
    assert!(emb.iter().all(|e| e.len() == 16));
    let a = embed_and_cluster(&spec, &m.demos, &m.svae, 3, Pooling::Max, 5).unwrap();
    assert_eq!(a, embed_and_cluster(&spec, &m.demos, &m.svae, 3, Pooling::Max, 5).unwrap());
    assert_eq!(a.sizes().iter().sum::<usize>(), 6);
    assert!(embed_and_cluster(&spec, &m.demos, &m.svae, 7, Pooling::Mean, 5).is_err());
}

#[test]
fn zero_epoch_specialist_is_the_generalist() {
    let spec = CharacterSpec::humanoid();
    let m = models(&spec);
    let cfg = policy_config();
    let g = new_policy(&spec, &m.data, &cfg, 1);
    let subset = m.data.filter(|d| d < 3);
    let sp = specialize(&g, &subset, &m.frozen, &cfg, 0, 2).unwrap();
    assert_eq!(parameter_digest(&sp.head), parameter_digest(&g.head));
    let trained = specialize(&g, &subset, &m.frozen, &cfg, 3, 2).unwrap();
    assert_ne!(parameter_digest(&trained.head), parameter_digest(&g.head));
}

#[test]
fn relabeled_latents_are_specialist_encodings() {
    let spec = CharacterSpec::humanoid();
    let m = models(&spec);
    let cfg = policy_config();
    let sp = new_policy(&spec, &m.data, &cfg, 9);
    let labels = vec![0, 1, 0, 1, 0, 1];
    let out = relabel(&spec, &m.data, &[Some(sp.clone()), None], &labels, &m.avae).unwrap();
    assert_eq!(out.len(), m.data.len());
    let targets = sp.mean_targets(&spec, &m.data.features, &m.data.base).unwrap();
    for i in 0..m.data.len() {
        if labels[m.data.origin[i].0] == 0 {
            let rel: Vec<f64> = (0..spec.num_joints()).map(|j| targets[[i, j]] - m.data.base[[i, j]]).collect();
            let z = normalize(&m.avae.encode(&rel).unwrap());
            for (a, b) in out.action_latent.row(i).iter().zip(&z) {
                assert!((a - b).abs() < 1e-9);
            }
            assert_eq!(out.actions.row(i), targets.row(i));
        } else {
            assert_eq!(out.actions.row(i), m.data.actions.row(i));
            assert_eq!(out.action_latent.row(i), m.data.action_latent.row(i));
        }
    }
}

#[test]
fn copies_of_the_generalist_are_a_distillation_fixed_point() {
    let spec = CharacterSpec::humanoid();
    let m = models(&spec);
    let cfg = PolicyConfig {
        action_loss: ActionLoss::L2,
        w_fd: 0.0,
        w_reg: 0.0,
        ..policy_config()
    };
    let (g, _) = train_policy(new_policy(&spec, &m.data, &cfg, 1), &m.data, &m.frozen, &cfg, 1).unwrap();
    let assignment = ClusterAssignment {
        k: 2,
        labels: vec![0, 1, 0, 1, 0, 1],
        centroids: vec![vec![0.0], vec![1.0]],
    };
    let models = IgslModels {
        state_vae: &m.svae,
        action_vae: &m.avae,
        frozen: &m.frozen,
    };
    let config = IgslConfig {
        k: 2,
        distill_epochs: 0,
        ..Default::default()
    };
    let specialists = vec![Some(g.clone()), Some(g.clone())];
    let own = relabel(&spec, &m.data, &specialists, &assignment.labels, &m.avae).unwrap();
    assert!(evaluate_losses(&g, &m.frozen, &own, &cfg).unwrap().total < 1e-20);
    let mut tape = Tape::new();
    let params = g.bind(&mut tape, true);
    let nodes = imitation_loss_tape(&mut tape, &g, &params, &m.frozen, &own, &cfg).unwrap();
    let grads = tape.backward(nodes.total).unwrap().collect(&params);
    assert!(grads.iter().flatten().all(|v| v.abs() < 1e-9));
    let d = distill(&spec, &g, &specialists, &m.demos, &m.data, &assignment, &models, &config, &cfg, 3).unwrap();
    assert_eq!(d, g);
}

#[test]
fn loop_reports_one_row_set_per_round_and_never_regresses() {
    let spec = CharacterSpec::humanoid();
    let m = models(&spec);
    let cfg = policy_config();
    let g = new_policy(&spec, &m.data, &cfg, 1);
    let train = m.data.filter(|d| d < 4);
    let heldout = m.data.filter(|d| d >= 4);
    let models = IgslModels {
        state_vae: &m.svae,
        action_vae: &m.avae,
        frozen: &m.frozen,
    };
    let none = IgslConfig {
        k: 2,
        outer: 0,
        ..Default::default()
    };
    let (same, report) = igsl_loop(&spec, g.clone(), &m.demos, &train, &heldout, models, &none, &cfg, 4).unwrap();
    assert_eq!(same, g);
    assert!(report.iterations.is_empty());
    assert_eq!(report.initial_heldout, report.final_heldout);

    let two = IgslConfig {
        k: 2,
        outer: 2,
        specialist_epochs: 2,
        distill_epochs: 2,
        ..Default::default()
    };
    let (_, report) = igsl_loop(&spec, g.clone(), &m.demos, &train, &heldout, models, &two, &cfg, 4).unwrap();
    assert_eq!(report.iterations.len(), 2);
    assert!(report.final_heldout <= report.initial_heldout);
    for it in &report.iterations {
        assert_eq!(it.clusters.len(), 2);
        assert_eq!(it.accepted, it.heldout_after <= it.heldout_before);
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 4);
}
