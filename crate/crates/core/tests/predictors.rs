//! Training and rollout behaviour of the learned predictors on synthetic data.

use once_cell::sync::Lazy;
use oodd::nn::Tensor2;
use oodd::predictors::{FeatureNet, Forecaster, NetKind, NeuralModel, RolloutConfig, TrainConfig};
use oodd::rng::stream;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn constant_set(c: &[f64], count: usize, len: usize) -> Vec<Tensor2> {
    (0..count)
        .map(|_| Tensor2::from_rows(&vec![c.to_vec(); len]).unwrap())
        .collect()
}

/// First-order process `x' = 0.8 x + 0.3 ε` in two independent features.
fn ar1_set(count: usize, len: usize, seed: u64) -> Vec<Tensor2> {
    let mut rng = stream(seed);
    (0..count)
        .map(|_| {
            let mut x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let mut t = Tensor2::zeros(0, 2);
            for _ in 0..len {
                t.push_row(&x).unwrap();
                for v in &mut x {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v = 0.8 * *v + 0.3 * e;
                }
            }
            t
        })
        .collect()
}

fn refs(v: &[Tensor2]) -> Vec<&Tensor2> {
    v.iter().collect()
}

fn quick(epochs: usize, batches: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batches_per_epoch: Some(batches),
        lr,
        seed: 11,
        ..TrainConfig::default()
    }
}

const C: [f64; 2] = [0.5, -0.3];

static CONSTANT_RIQN: Lazy<NeuralModel> = Lazy::new(|| {
    let train = constant_set(&C, 32, 40);
    let val = constant_set(&C, 4, 40);
    NeuralModel::train(NetKind::Riqn, &refs(&train), &refs(&val), &quick(6, 20, 0.01)).unwrap()
});

static AR_RIQN: Lazy<NeuralModel> = Lazy::new(|| {
    let train = ar1_set(200, 60, 1);
    let val = ar1_set(32, 60, 2);
    NeuralModel::train(NetKind::Riqn, &refs(&train), &refs(&val), &quick(6, 40, 0.01)).unwrap()
});

#[test]
fn riqn_on_constant_data_predicts_the_constant() {
    let m = &*CONSTANT_RIQN;
    let history = constant_set(&C, 1, 10).remove(0);
    let taus: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    for (j, c) in C.iter().enumerate() {
        for q in m.quantiles(&history, j, &taus).unwrap() {
            assert!((q - c).abs() < 0.05, "feature {j}: {q} vs {c}");
        }
    }
}

#[test]
fn riqn_validation_loss_improves() {
    let h = &AR_RIQN.history;
    let last = *h.val_losses.last().unwrap();
    assert!(last < h.initial_val_loss, "{last} vs {}", h.initial_val_loss);
}

#[test]
fn npn_on_constant_data_predicts_the_constant() {
    let train = constant_set(&C, 32, 40);
    let val = constant_set(&C, 4, 40);
    let m = NeuralModel::train(NetKind::Npn, &refs(&train), &refs(&val), &quick(6, 20, 0.01)).unwrap();
    let history = constant_set(&C, 1, 10).remove(0);
    let out = m
        .rollout(&history, &RolloutConfig { delta: 1, samples: 8, mean_sampling: false }, &mut stream(0))
        .unwrap();
    assert_eq!(out.rows(), 1);
    for (j, c) in C.iter().enumerate() {
        assert!((out.get(0, j) - c).abs() < 0.01, "feature {j}: {}", out.get(0, j));
    }
}

#[test]
fn window_one_nriqn_matches_riqn_on_markov_data() {
    let train = ar1_set(200, 60, 1);
    let val = ar1_set(32, 60, 2);
    let cfg = TrainConfig {
        window: 1,
        ..quick(6, 40, 0.01)
    };
    let nriqn = NeuralModel::train(NetKind::Nriqn, &refs(&train), &refs(&val), &cfg).unwrap();
    let riqn = AR_RIQN.validation_loss(&refs(&val), &cfg).unwrap();
    let flat = nriqn.validation_loss(&refs(&val), &cfg).unwrap();
    assert!(flat <= 1.2 * riqn, "nriqn {flat} vs riqn {riqn}");
}

#[test]
fn constant_data_rollouts_do_not_drift() {
    let history = constant_set(&C, 1, 10).remove(0);
    let cfg = RolloutConfig { delta: 10, samples: 8, mean_sampling: false };
    let out = CONSTANT_RIQN.rollout(&history, &cfg, &mut stream(3)).unwrap();
    assert_eq!(out.rows(), 8);
    for row in out.iter_rows() {
        for (v, c) in row.iter().zip(C) {
            assert!((v - c).abs() < 0.2, "{v} vs {c}");
        }
    }
}

#[test]
fn one_step_mean_sampling_equals_plain_rollout() {
    let obs = ar1_set(1, 30, 9).remove(0);
    let plain = RolloutConfig { delta: 1, samples: 8, mean_sampling: false };
    let ms = RolloutConfig { mean_sampling: true, ..plain };
    let a = AR_RIQN.rollout(&obs.slice_rows(0, 21), &plain, &mut stream(5)).unwrap();
    let b = AR_RIQN.rollout(&obs.slice_rows(0, 21), &ms, &mut stream(5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_sample_mean_sampling_equals_plain_rollout() {
    let obs = ar1_set(1, 30, 9).remove(0);
    let plain = RolloutConfig { delta: 10, samples: 1, mean_sampling: false };
    let ms = RolloutConfig { mean_sampling: true, ..plain };
    let a = AR_RIQN.rollout_series(&obs, &plain, &mut stream(5)).unwrap();
    let b = AR_RIQN.rollout_series(&obs, &ms, &mut stream(5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mean_sampling_reduces_spread() {
    let histories = ar1_set(100, 25, 21);
    let plain = RolloutConfig { delta: 5, samples: 8, mean_sampling: false };
    let ms = RolloutConfig { mean_sampling: true, ..plain };
    let spread = |t: &Tensor2| -> f64 {
        (0..t.cols())
            .map(|j| {
                let col = t.column(j);
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64
            })
            .sum()
    };
    let (mut vp, mut vm) = (0.0, 0.0);
    for (i, h) in histories.iter().enumerate() {
        vp += spread(&AR_RIQN.rollout(&h.slice_rows(0, 20), &plain, &mut stream(i as u64)).unwrap());
        vm += spread(&AR_RIQN.rollout(&h.slice_rows(0, 20), &ms, &mut stream(i as u64)).unwrap());
    }
    assert!(vm <= vp, "mean sampling {vm} vs plain {vp}");
}

#[test]
fn npn_rollouts_are_deterministic() {
    let mut rng = stream(4);
    let m = NeuralModel::new(NetKind::Npn, 3, 1, &mut rng);
    let obs = Tensor2::from_vec(12, 3, (0..36).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
    let cfg = RolloutConfig { delta: 4, samples: 8, mean_sampling: false };
    let a = m.rollout_series(&obs, &cfg, &mut stream(1)).unwrap();
    let b = m.rollout_series(&obs, &cfg, &mut stream(2)).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|s| s.rows() == 1));
}

#[test]
fn replacing_one_feature_net_changes_only_its_column() {
    let obs = ar1_set(1, 30, 13).remove(0);
    let cfg = RolloutConfig { delta: 1, samples: 8, mean_sampling: false };
    let base = AR_RIQN.rollout_series(&obs, &cfg, &mut stream(8)).unwrap();
    let mut edited = AR_RIQN.clone();
    edited.nets[1] = FeatureNet::new(2, true, true, &mut stream(99));
    let after = edited.rollout_series(&obs, &cfg, &mut stream(8)).unwrap();
    let mut changed = false;
    for (a, b) in base.iter().zip(&after) {
        assert_eq!(a.column(0), b.column(0));
        changed |= a.column(1) != b.column(1);
    }
    assert!(changed);
}

#[test]
fn quantiles_are_mostly_monotone() {
    let histories = ar1_set(100, 20, 31);
    let mut ok = 0;
    let mut total = 0;
    for (i, h) in histories.iter().enumerate() {
        let len = 5 + i % 15;
        let h = h.slice_rows(0, len);
        for j in 0..2 {
            let q = AR_RIQN.quantiles(&h, j, &[0.1, 0.5, 0.9]).unwrap();
            total += 1;
            if q[0] <= q[1] && q[1] <= q[2] {
                ok += 1;
            }
        }
    }
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
}
