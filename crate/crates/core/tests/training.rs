use menode_core::data::{generate_grouped_2d, generate_toy, PanelDataset, ToySpec};
use menode_core::model::{MeNodeModel, ModelConfig};
use menode_core::ode::TimeGrid;
use menode_core::rng;
use menode_core::train::{
    elbo_gradient_check, loss_and_grad_selected, loss_selected, loss_subject, observed_grid,
    select_closest, candidate_distances, train, NoiseBank, TrainConfig, TrainState,
};
use menode_core::{math, Error, Tensor};

/// Identity-mode toy model sitting at the generating parameters.
fn true_toy_model() -> MeNodeModel {
    true_toy_model_with(ModelConfig::toy().obs_sigma)
}

fn true_toy_model_with(obs_sigma: f64) -> MeNodeModel {
    let cfg = ModelConfig {
        obs_sigma,
        init_sigma0: 0.01,
        init_sigma_b: 0.01,
        ..ModelConfig::toy()
    };
    let mut m = MeNodeModel::new(cfg, 0).unwrap();
    let names = m.param_names();
    let beta = names.iter().position(|n| n == "beta").unwrap();
    m.params_mut()[beta] = Tensor::vector(vec![0.3]);
    m
}

fn small_toy(n: usize, seed: u64) -> PanelDataset {
    generate_toy(
        &ToySpec {
            n_subjects: n,
            ..ToySpec::default()
        },
        seed,
    )
    .unwrap()
}

fn mlp_model() -> MeNodeModel {
    let cfg = ModelConfig {
        latent_dim: 2,
        effect_dim: 1,
        obs_dim: 2,
        encoder_hidden: vec![8],
        gamma_hidden: vec![8],
        decoder_hidden: vec![8],
        ..ModelConfig::default()
    };
    MeNodeModel::new(cfg, 4).unwrap()
}

#[test]
fn gradient_check_identity_mode() {
    let ds = small_toy(5, 1);
    let grid = observed_grid(&ds, 3).unwrap();
    let model = true_toy_model();
    for k in [1, 3] {
        let cfg = TrainConfig {
            n_z0: 3,
            n_w: 3,
            accept_k: k,
            ..TrainConfig::default()
        };
        let bank = NoiseBank::draw(&mut rng::stream(9, 0), 3, 3, 1, 1);
        let r = elbo_gradient_check(&model, &ds.observed_window(&ds.subjects[0]), &grid, &cfg, &bank, 1e-6).unwrap();
        assert_eq!(r.accepted.len(), k);
        assert!(r.max_rel_error < 1e-3, "{:?}", r.groups);
    }
}

#[test]
fn gradient_check_full_model() {
    let ds = generate_grouped_2d(4, 3, 2).unwrap();
    let grid = observed_grid(&ds, 3).unwrap();
    let model = mlp_model();
    let cfg = TrainConfig {
        n_z0: 2,
        n_w: 3,
        accept_k: 2,
        ..TrainConfig::default()
    };
    let bank = NoiseBank::draw(&mut rng::stream(5, 0), 2, 3, 2, 1);
    let r = elbo_gradient_check(&model, &ds.observed_window(&ds.subjects[0]), &grid, &cfg, &bank, 1e-5).unwrap();
    assert_eq!(r.groups.len(), model.params().len());
    assert!(r.max_rel_error < 1e-2, "{:?}", r.groups);
}

#[test]
fn loss_shrinks_as_fewer_samples_are_kept() {
    let ds = small_toy(20, 3);
    let grid = observed_grid(&ds, 3).unwrap();
    // At the data's own noise scale; with σ_x = 0.1 the mode-seeking z0 term
    // outweighs the likelihood gain.
    let model = true_toy_model_with(0.01);
    let ks = [100, 50, 10, 1];
    let mut means = [0.0; 4];
    for s in &ds.subjects {
        let x = ds.observed_window(s);
        for rep in 0..5 {
            let bank = NoiseBank::draw(&mut rng::stream(s.id, rep), 10, 10, 1, 1);
            let d = candidate_distances(&model, &x, &grid, menode_core::ode::Method::Rk4, &bank).unwrap();
            for (slot, &k) in means.iter_mut().zip(&ks) {
                let cfg = TrainConfig {
                    accept_k: k,
                    ..TrainConfig::default()
                };
                *slot += loss_selected(&model, &x, &grid, &cfg, &bank, &select_closest(&d, k)).unwrap();
            }
        }
    }
    for w in means.windows(2) {
        assert!(w[1] < w[0], "means {means:?}");
    }
}

#[test]
fn accept_all_estimator_variance_shrinks_with_samples() {
    let ds = small_toy(1, 4);
    let grid = observed_grid(&ds, 3).unwrap();
    let x = ds.observed_window(&ds.subjects[0]);
    let model = true_toy_model();
    let spread = |m: usize| {
        let cfg = TrainConfig {
            n_z0: m,
            n_w: 1,
            accept_k: m,
            ..TrainConfig::default()
        };
        let all: Vec<usize> = (0..m).collect();
        let losses: Vec<f64> = (0..50)
            .map(|r| {
                let bank = NoiseBank::draw(&mut rng::stream(77, r), m, 1, 1, 1);
                loss_selected(&model, &x, &grid, &cfg, &bank, &all).unwrap()
            })
            .collect();
        math::sqrt(math::variance(&losses))
    };
    let (s100, s900) = (spread(100), spread(900));
    assert!(s900 < s100, "{s100} vs {s900}");
    assert!(s100 < 3.0 * s900 * 3.0, "{s100} vs {s900}");
}

#[test]
fn rejected_candidates_do_not_touch_gradients() {
    let ds = generate_grouped_2d(4, 2, 6).unwrap();
    let grid = observed_grid(&ds, 3).unwrap();
    let x = ds.observed_window(&ds.subjects[1]);
    let model = mlp_model();
    let cfg = TrainConfig {
        n_z0: 6,
        n_w: 1,
        accept_k: 2,
        ..TrainConfig::default()
    };
    let bank = NoiseBank::draw(&mut rng::stream(1, 0), 6, 1, 2, 1);
    let (loss, grads, rec) = loss_subject(&model, 1, &x, &grid, &cfg, &bank).unwrap();
    let mut poisoned = bank.clone();
    for c in 0..6 {
        if !rec.accepted.contains(&c) {
            poisoned.z0.data_mut()[2 * c..2 * c + 2].fill(f64::NAN);
            poisoned.w.data_mut()[c] = 1e300;
        }
    }
    let (loss2, grads2) = loss_and_grad_selected(&model, &x, &grid, &cfg, &poisoned, &rec.accepted).unwrap();
    assert_eq!(loss.to_bits(), loss2.to_bits());
    assert_eq!(grads, grads2);
}

#[test]
fn accepted_distances_bound_rejected_ones() {
    let ds = small_toy(10, 8);
    let grid = observed_grid(&ds, 3).unwrap();
    let model = true_toy_model();
    let cfg = TrainConfig {
        accept_k: 7,
        ..TrainConfig::default()
    };
    for s in &ds.subjects {
        let bank = NoiseBank::draw(&mut rng::stream(s.id, 0), 10, 10, 1, 1);
        let (_, _, rec) = loss_subject(&model, s.id, &ds.observed_window(s), &grid, &cfg, &bank).unwrap();
        assert_eq!(rec.accepted.len(), 7);
        let worst = rec.accepted.iter().map(|&a| rec.distances[a]).fold(0.0, f64::max);
        assert_eq!(worst, rec.epsilon);
        for (i, &d) in rec.distances.iter().enumerate() {
            if !rec.accepted.contains(&i) {
                assert!(d >= worst);
            }
        }
    }
}

#[test]
fn realised_epsilon_falls_during_training() {
    let ds = small_toy(200, 5);
    let mut model = MeNodeModel::new(ModelConfig::toy(), 5).unwrap();
    let cfg = TrainConfig {
        epochs: 16,
        batch_size: 25,
        seed: 5,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &ds, &cfg).unwrap();
    let eps: Vec<f64> = report.epochs.iter().map(|e| e.mean_epsilon).collect();
    let q = eps.len() / 4;
    assert!(math::mean(&eps[eps.len() - q..]) < math::mean(&eps[..q]), "{eps:?}");
    let last = report.last().unwrap().recovered.clone().unwrap();
    assert!(last.sigma.iter().chain(&last.sigma_b).all(|&s| s > 0.0));
}

#[test]
fn non_finite_batch_leaves_parameters_untouched() {
    let mut ds = generate_grouped_2d(4, 6, 3).unwrap();
    ds.subjects[2].obs.data_mut()[0] = 1e160;
    let mut model = mlp_model();
    let before = model.clone();
    let cfg = TrainConfig {
        n_z0: 2,
        n_w: 2,
        batch_size: 6,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(cfg, &model).unwrap();
    let err = state.run_epoch(&mut model, &ds).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, step: 0 }), "{err:?}");
    assert!(err.is_divergence());
    assert_eq!(model, before);
    assert_eq!(state.step, 0);
}

#[test]
fn resumed_epochs_match_uninterrupted_run() {
    let ds = small_toy(60, 2);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        seed: 42,
        ..TrainConfig::default()
    };
    let mut straight = MeNodeModel::new(ModelConfig::toy(), 1).unwrap();
    let full = train(&mut straight, &ds, &cfg).unwrap();

    let mut resumed = MeNodeModel::new(ModelConfig::toy(), 1).unwrap();
    let mut state = TrainState::new(cfg.clone(), &resumed).unwrap();
    let mut stats = vec![state.run_epoch(&mut resumed, &ds).unwrap()];
    let (mut model2, mut state2) = (resumed.clone(), state.clone());
    for _ in 1..3 {
        stats.push(state2.run_epoch(&mut model2, &ds).unwrap());
    }
    assert_eq!(full.epochs, stats);
    assert_eq!(model2, straight);
}

#[test]
fn loss_scales_with_window_size_for_exact_fit() {
    // q(z0) = p(z0) and q(w) = p(w) with zero residual: only the likelihood
    // normaliser is left.
    let cfg = ModelConfig {
        prior_z0_sigma: 0.5,
        prior_w_sigma: 0.5,
        init_sigma0: 0.5,
        init_sigma_b: 0.5,
        ..ModelConfig::toy()
    };
    let model = MeNodeModel::new(cfg, 0).unwrap();
    let times: Vec<f64> = (0..6).map(|k| k as f64 * 0.2).collect();
    let grid = TimeGrid::new(times, 2).unwrap();
    let x = Tensor::zeros(&[6, 1]);
    let tc = TrainConfig {
        n_z0: 1,
        n_w: 1,
        ..TrainConfig::default()
    };
    let bank = NoiseBank {
        n_w: 1,
        z0: Tensor::zeros(&[1, 1]),
        w: Tensor::matrix(1, 1, vec![0.7]),
    };
    let loss = loss_selected(&model, &x, &grid, &tc, &bank, &[0]).unwrap();
    let want = 6.0 * (0.1 * (2.0 * std::f64::consts::PI).sqrt()).ln();
    assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
}
