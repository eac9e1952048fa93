mod common;

use pflab::dc::solve_case;
use pflab::grid::Grid;
use pflab::mp::MpConfig;
use pflab::nn::{
    train, Activation, FeatureScaler, MlpParams, ModelKind, PhysicsOptions, SampleAux, SurrogateModel, TrainConfig,
};
use pflab::scenario::{generate_dataset, ScenarioConfig, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gradients_match_finite_differences_for_every_kind() {
    for kind in ModelKind::ALL {
        let opts = PhysicsOptions {
            lambda: 0.7,
            pimp_layers: 4,
            ..Default::default()
        };
        let check = common::check_gradients(kind, &opts, 5, 1e-5, 3);
        assert!(check.worst_rel < 1e-4, "{kind}: relative error {}", check.worst_rel);
    }
}

#[test]
fn pimp_gradient_with_damping_and_intermediate_physics() {
    let opts = PhysicsOptions {
        lambda: 1.3,
        pimp_layers: 6,
        damping: 0.7,
        intermediate_physics: true,
    };
    let check = common::check_gradients(ModelKind::Pimp, &opts, 5, 1e-5, 11);
    assert!(check.worst_rel < 1e-4, "relative error {}", check.worst_rel);
}

#[test]
fn output_dimensions_follow_the_grid() {
    let grid = Grid::ieee14();
    assert_eq!(ModelKind::Mlp.output_dim(&grid), 40);
    assert_eq!(ModelKind::MlpReg.output_dim(&grid), 28);
    assert_eq!(ModelKind::Pimp.output_dim(&grid), 28);
}

fn random_model(kind: ModelKind, grid: &Grid, layers: usize, seed: u64) -> SurrogateModel {
    let fin = pflab::grid::feature_len(grid);
    SurrogateModel {
        kind,
        params: MlpParams::init(
            &[fin, 12, kind.output_dim(grid)],
            Activation::Relu,
            &mut ChaCha8Rng::seed_from_u64(seed),
        ),
        scaler: FeatureScaler::identity(fin),
        physics: PhysicsOptions {
            pimp_layers: layers,
            ..Default::default()
        },
    }
}

#[test]
fn deep_pimp_chain_reaches_the_exact_solution() {
    let grid = Grid::ieee14();
    let ds = generate_dataset(&grid, Split::Test, &ScenarioConfig::for_split(Split::Test, 10, 21)).unwrap();
    let model = random_model(ModelKind::Pimp, &grid, MpConfig::default().n_layers, 5);
    for s in &ds.samples {
        let pred = model.predict(&grid, &s.tau, &s.inj).unwrap();
        let exact = solve_case(&grid, &s.tau, &s.inj).unwrap();
        let theta = pred.theta_bus.unwrap();
        let diff = theta
            .iter()
            .zip(&exact.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "max |dtheta| {diff}");
    }
}

#[test]
fn batch_prediction_equals_single_prediction() {
    let grid = Grid::ieee14();
    let ds = generate_dataset(&grid, Split::Ood, &ScenarioConfig::for_split(Split::Ood, 12, 2)).unwrap();
    for kind in ModelKind::ALL {
        let model = random_model(kind, &grid, 7, 9);
        let inputs: Vec<_> = ds.samples.iter().map(|s| (&s.tau, &s.inj)).collect();
        let batch = model.predict_batch(&grid, &inputs).unwrap();
        for (s, b) in ds.samples.iter().zip(&batch) {
            let single = model.predict(&grid, &s.tau, &s.inj).unwrap();
            let close =
                |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12);
            assert!(close(&single.theta_line, &b.theta_line), "{kind}");
            assert!(close(&single.flows.p_or, &b.flows.p_or), "{kind}");
            assert_eq!(single.theta_bus.is_some(), b.theta_bus.is_some());
            if let (Some(x), Some(y)) = (&single.theta_bus, &b.theta_bus) {
                assert!(close(x, y), "{kind}");
            }
        }
    }
}

#[test]
fn mismatched_grid_is_rejected() {
    let grid = Grid::ieee14();
    let (toy, samples) = common::toy_samples(1, 0);
    let model = random_model(ModelKind::Mlp, &grid, 0, 1);
    let s = &samples[0];
    assert!(matches!(
        model.predict(&toy, &s.tau, &s.inj),
        Err(pflab::Error::DimensionMismatch { .. })
    ));
}

#[test]
fn ground_truth_prediction_has_tiny_regularized_loss() {
    let grid = Grid::ieee14();
    let ds = generate_dataset(&grid, Split::Train, &ScenarioConfig::for_split(Split::Train, 5, 8)).unwrap();
    for s in &ds.samples {
        let aux = SampleAux::new(&grid, s).unwrap();
        let (parts, _) =
            pflab::nn::sample_loss(ModelKind::MlpReg, &s.theta_bus, &aux, &PhysicsOptions::default(), false);
        assert!(parts.total(1.0) < 1e-16);
    }
}

fn small_sets(n_train: usize) -> (Grid, pflab::scenario::Dataset, pflab::scenario::Dataset) {
    let grid = Grid::ieee14();
    let tr = generate_dataset(
        &grid,
        Split::Train,
        &ScenarioConfig::for_split(Split::Train, n_train, 31),
    )
    .unwrap();
    let va = generate_dataset(&grid, Split::Val, &ScenarioConfig::for_split(Split::Val, 200, 32)).unwrap();
    (grid, tr, va)
}

fn quick_config(kind: ModelKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        model_kind: kind,
        epochs,
        batch_size: 64,
        hidden: vec![64, 64],
        pimp_layers: 10,
        seed: 4,
        ..Default::default()
    }
}

#[test]
fn mlp_beats_the_mean_predictor() {
    let (grid, tr, va) = small_sets(1500);
    let (model, report) = train(&grid, &tr, &va, &quick_config(ModelKind::Mlp, 25)).unwrap();
    let targets: Vec<f64> = va.samples.iter().flat_map(|s| s.theta_line.iter().copied()).collect();
    let l = 2 * grid.n_lines();
    let mut var = 0.0;
    for k in 0..l {
        let col: Vec<f64> = targets.iter().skip(k).step_by(l).copied().collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        var += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
    }
    var /= l as f64;
    assert!(
        report.best_val_loss < var,
        "val MSE {} vs target variance {var}",
        report.best_val_loss
    );
    assert_eq!(model.kind, ModelKind::Mlp);
}

#[test]
fn report_lengths_and_loss_decomposition() {
    let (grid, tr, va) = small_sets(400);
    let cfg = quick_config(ModelKind::MlpReg, 6);
    let (_, r) = train(&grid, &tr, &va, &cfg).unwrap();
    assert_eq!(r.epochs_run(), 6);
    for v in [
        &r.train_data,
        &r.train_physics,
        &r.val_loss,
        &r.val_data,
        &r.val_physics,
        &r.lr,
    ] {
        assert_eq!(v.len(), 6);
    }
    for e in 0..6 {
        assert!((r.train_loss[e] - (r.train_data[e] + cfg.lambda_physics * r.train_physics[e])).abs() < 1e-12);
        assert!((r.val_loss[e] - (r.val_data[e] + cfg.lambda_physics * r.val_physics[e])).abs() < 1e-12);
    }
}

#[test]
fn training_is_reproducible() {
    let (grid, tr, va) = small_sets(300);
    let cfg = quick_config(ModelKind::Pimp, 3);
    let (m1, r1) = train(&grid, &tr, &va, &cfg).unwrap();
    let (m2, r2) = train(&grid, &tr, &va, &cfg).unwrap();
    assert!(r1.same_trajectory(&r2));
    assert_eq!(m1, m2);
}

#[test]
fn regularized_physics_loss_stabilizes() {
    let (grid, tr, va) = small_sets(1000);
    let (_, r) = train(&grid, &tr, &va, &quick_config(ModelKind::MlpReg, 15)).unwrap();
    assert!(
        r.train_physics.last().unwrap() < &r.train_physics[0],
        "{:?}",
        r.train_physics
    );
}

#[test]
fn plateau_reduces_the_learning_rate() {
    let (grid, tr, va) = small_sets(200);
    let cfg = TrainConfig {
        plateau_patience: 1,
        initial_lr: 0.5,
        min_lr: 0.01,
        ..quick_config(ModelKind::Mlp, 12)
    };
    let (_, r) = train(&grid, &tr, &va, &cfg).unwrap();
    assert!(r.lr.windows(2).all(|w| w[1] <= w[0]));
    assert!(*r.lr.last().unwrap() < 0.5);
    assert!(r.lr.iter().all(|&lr| lr >= 0.01));
}

#[test]
fn invalid_training_configs_are_rejected() {
    let (grid, tr, va) = small_sets(50);
    for cfg in [
        TrainConfig {
            plateau_factor: 1.0,
            ..quick_config(ModelKind::Mlp, 1)
        },
        TrainConfig {
            lambda_physics: -1.0,
            ..quick_config(ModelKind::Mlp, 1)
        },
        TrainConfig {
            epochs: 0,
            ..quick_config(ModelKind::Mlp, 1)
        },
    ] {
        assert!(matches!(
            train(&grid, &tr, &va, &cfg),
            Err(pflab::Error::InvalidConfig(_))
        ));
    }
}

#[test]
fn divergence_is_reported() {
    let (grid, tr, va) = small_sets(100);
    let cfg = TrainConfig {
        initial_lr: 1e300,
        ..quick_config(ModelKind::Mlp, 3)
    };
    assert!(matches!(
        train(&grid, &tr, &va, &cfg),
        Err(pflab::Error::NonFiniteLoss { .. })
    ));
}
