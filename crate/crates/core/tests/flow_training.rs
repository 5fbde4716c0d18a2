use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usflow::beamformer::{ImageGrid, RfImage};
use usflow::flow::{train, training_loss, Dataset, PairedSample, Scenario, Split, TrainOptions};
use usflow::network::{init_parameters, Hyperparams, NetConfig};
use usflow::Error;

fn grid(n: usize) -> ImageGrid {
    ImageGrid::new(-1e-3, 1e-4, n, 1e-3, 1e-4, n).unwrap()
}

/// Smooth target plus a per-sample oscillating disturbance.
fn pair(seed: u64, n: usize) -> PairedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, f): (f64, f64, f64) = (rng.random_range(0.5..1.5), rng.random_range(0.0..6.0), rng.random_range(0.8..1.6));
    let x0 = Array2::from_shape_fn((n, n), |(i, j)| a * ((i as f64 * 0.4 + b).sin() + 0.3 * (j as f64 * 0.3).cos()));
    let x1 = Array2::from_shape_fn((n, n), |(i, j)| x0[[i, j]] + 0.8 * ((i + 2 * j) as f64 * f).sin());
    PairedSample::new(
        RfImage::new(x0, grid(n), vec![0.0; 3]).unwrap(),
        RfImage::new(x1, grid(n), vec![0.0]).unwrap(),
    )
    .unwrap()
}

fn tiny(n: usize) -> NetConfig {
    NetConfig {
        depth: 1,
        base_channels: 8,
        time_dim: 8,
        nz: n,
        nx: n,
    }
}

fn scenario() -> Scenario {
    Scenario { j: 1, k: 3, steps: 5 }
}

fn two_sample_dataset(n: usize) -> Dataset {
    Dataset::new(
        vec![pair(1, n), pair(2, n)],
        Split {
            train: vec![0, 1],
            val: vec![],
            test: vec![],
        },
        0,
    )
    .unwrap()
}

#[test]
fn zero_epochs_returns_initialization() {
    let d = two_sample_dataset(8);
    let hyper = Hyperparams {
        epochs: 0,
        ..Default::default()
    };
    let out = train(&d, &scenario(), &tiny(8), &hyper, &TrainOptions::default(), 5).unwrap();
    let init = init_parameters(&tiny(8), 5).unwrap();
    assert_eq!(out.model.params, init.params);
    assert_eq!(out.model.buffers, init.buffers);
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, None);
}

#[test]
fn identical_seeds_reproduce_training() {
    let d = two_sample_dataset(8);
    let hyper = Hyperparams {
        epochs: 4,
        batch_size: 2,
        ..Default::default()
    };
    let a = train(&d, &scenario(), &tiny(8), &hyper, &TrainOptions::default(), 9).unwrap();
    let b = train(&d, &scenario(), &tiny(8), &hyper, &TrainOptions::default(), 9).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
}

#[test]
fn overfits_two_samples() {
    let d = two_sample_dataset(16);
    let hyper = Hyperparams {
        epochs: 200,
        batch_size: 2,
        ..Default::default()
    };
    let out = train(&d, &scenario(), &tiny(16), &hyper, &TrainOptions::default(), 3).unwrap();
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < 0.1 * first, "first {first} last {last}");
}

#[test]
fn loss_ignores_batch_order() {
    let m = init_parameters(&tiny(8), 2).unwrap();
    let (a, b, c) = (pair(1, 8), pair(2, 8), pair(3, 8));
    let l1 = training_loss(&m, &[&a, &b, &c], &[0.2, 0.4, 1.0]).unwrap().loss;
    let l2 = training_loss(&m, &[&c, &a, &b], &[1.0, 0.2, 0.4]).unwrap().loss;
    assert!((l1 - l2).abs() <= 1e-12 * l1.abs());
    assert!(l1 >= 0.0);
}

#[test]
fn divergence_reports_epoch() {
    let d = two_sample_dataset(8);
    let hyper = Hyperparams {
        lr0: 1e300,
        epochs: 5,
        batch_size: 2,
        ..Default::default()
    };
    match train(&d, &scenario(), &tiny(8), &hyper, &TrainOptions::default(), 1) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch < 5),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn scenario_mismatch_is_rejected() {
    let d = two_sample_dataset(8);
    let s = Scenario { j: 1, k: 5, steps: 5 };
    assert!(train(&d, &s, &tiny(8), &Hyperparams::default(), &TrainOptions::default(), 1).is_err());
}
