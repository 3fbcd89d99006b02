use proptest::prelude::*;
use shgnn::autodiff::Tensor;
use shgnn::synth::{gradcheck_config, gradcheck_toy, planted, PlantedConfig};
use shgnn::train::{adam_step, fit, AdamState};
use shgnn::{Error, TrainConfig};

fn short(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig { epochs, ..gradcheck_config(seed) }
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let ds = gradcheck_toy(1).unwrap();
    let cfg = TrainConfig { learning_rate: 0.0, ..short(1, 5) };
    let out = fit(&ds, &cfg).unwrap();
    let init = shgnn::ModelParams::init(&out.inputs, cfg.seed);
    assert_eq!(out.params, init);
    assert!(out.log.windows(2).all(|w| w[0].train_loss == w[1].train_loss));
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn same_seed_same_run() {
    let ds = gradcheck_toy(2).unwrap();
    let cfg = short(2, 15);
    let (a, b) = (fit(&ds, &cfg).unwrap(), fit(&ds, &cfg).unwrap());
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    assert_eq!(a.best_epoch, b.best_epoch);
    let c = fit(&ds, &short(3, 15)).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn a_tiny_step_lowers_the_training_loss() {
    for seed in 0..20 {
        let ds = gradcheck_toy(seed).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-6, ..short(seed, 1) };
        let out = fit(&ds, &cfg).unwrap();
        assert!(out.log[1].train_loss < out.log[0].train_loss, "seed {seed}");
    }
}

#[test]
fn early_stopping_returns_the_best_epoch() {
    let ds = gradcheck_toy(4).unwrap();
    let cfg = TrainConfig { learning_rate: 0.1, epochs: 300, patience: 5, ..short(4, 300) };
    let out = fit(&ds, &cfg).unwrap();
    assert!(out.stopped_early, "expected the validation loss to stall");
    assert_eq!(out.log.len(), out.best_epoch + cfg.patience + 2);
    let best = out.log[out.best_epoch].val_loss.unwrap();
    assert!(out.log.iter().all(|e| e.val_loss.unwrap() >= best));
    let rerun = fit(&ds, &TrainConfig { epochs: out.best_epoch, ..cfg.clone() }).unwrap();
    assert_eq!(rerun.best_epoch, out.best_epoch);
    assert_eq!(rerun.params, out.params);
}

#[test]
fn without_validation_the_training_loss_selects() {
    let mut ds = gradcheck_toy(0).unwrap();
    ds.splits.validation.clear();
    let out = fit(&ds, &short(0, 10)).unwrap();
    assert!(out.log.iter().all(|e| e.val_loss.is_none()));
    let best = out.log[out.best_epoch].train_loss;
    assert!(out.log.iter().all(|e| e.train_loss >= best));
}

#[test]
fn huge_steps_diverge_with_a_named_parameter() {
    let ds = gradcheck_toy(0).unwrap();
    let cfg = TrainConfig { learning_rate: 1e200, ..short(0, 20) };
    match fit(&ds, &cfg) {
        Err(Error::Diverged { param, epoch, .. }) => {
            assert!(epoch > 0);
            assert_ne!(param, "none");
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.best_epoch)),
    }
}

#[test]
fn planted_training_fits_the_training_split() {
    let ds = planted(&PlantedConfig::default(), 0).unwrap();
    let out = fit(&ds, &TrainConfig::default()).unwrap();
    let best = &out.log[out.best_epoch];
    assert!(best.train_acc >= 0.95, "train accuracy {}", best.train_acc);
    assert!(best.train_loss < out.log[0].train_loss);
}

/// Adam written out for one scalar at a time.
fn scalar_adam(theta: &mut [f64], grads: &[Vec<f64>], lr: f64, wd: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..theta.len() {
            let gi = g[i] + wd * theta[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adam_matches_the_scalar_reference(
        init in prop::collection::vec(-3.0f64..3.0, 1..6),
        steps in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..12),
        lr in 1e-4f64..0.5,
        wd in prop_oneof![Just(0.0), 1e-4f64..0.1],
    ) {
        let n = init.len();
        let grads: Vec<Vec<f64>> = steps.iter().map(|s| s[..n].to_vec()).collect();
        let mut want = init.clone();
        scalar_adam(&mut want, &grads, lr, wd);
        let mut p = vec![Tensor::vector(init)];
        let mut state = AdamState::new(&p);
        for g in &grads {
            adam_step(&mut p, &[Tensor::vector(g.clone())], &mut state, lr, wd).unwrap();
        }
        for (x, y) in p[0].data().iter().zip(&want) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}
