//! Trains a small CartPole RIQN and prints its predictive quantiles for the
//! next observation of a held-out episode.

use oodd::dataset::{self, normalize, FeatureStats};
use oodd::nn::Tensor2;
use oodd::predictors::{NetKind, NeuralModel, TrainConfig};
use oodd::sim::EnvKind;

fn main() -> oodd::Result<()> {
    let env = EnvKind::CartPole;
    let train = dataset::generate_nominal(env, 300, 200, 1)?;
    let val = dataset::generate_nominal(env, 30, 200, 2)?;
    let stats = FeatureStats::compute(&train)?;
    let norm = |set: &[dataset::Trajectory]| -> Vec<Tensor2> {
        set.iter().map(|t| normalize(t, &stats).observations).collect()
    };
    let (train_n, val_n) = (norm(&train), norm(&val));
    let cfg = TrainConfig {
        epochs: 6,
        batches_per_epoch: Some(40),
        lr: 0.01,
        ..TrainConfig::default()
    };
    let model = NeuralModel::train(
        NetKind::Riqn,
        &train_n.iter().collect::<Vec<_>>(),
        &val_n.iter().collect::<Vec<_>>(),
        &cfg,
    )?;
    println!("validation loss {:.4} at init", model.history.initial_val_loss);
    for (e, l) in model.history.val_losses.iter().enumerate() {
        println!("  epoch {e}: {l:.4} (teacher forcing {:.2})", cfg.teacher_prob(e));
    }

    let episode = &val_n[0];
    let t = 50;
    let taus = [0.1, 0.25, 0.5, 0.75, 0.9];
    for j in 0..env.obs_dim() {
        let q = model.quantiles(&episode.slice_rows(0, t), j, &taus)?;
        println!(
            "o_{j} at t={t}: truth {:+.3}, quantiles {:?}",
            episode.get(t, j),
            q.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
