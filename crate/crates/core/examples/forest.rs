//! Fits the random-forest baseline on CartPole and compares its one-step
//! error with a copy-last-observation predictor.

use oodd::dataset::{self, normalize, FeatureStats};
use oodd::nn::Tensor2;
use oodd::predictors::{ForestConfig, ForestModel, Forecaster, RolloutConfig};
use oodd::rng::stream;

fn main() -> oodd::Result<()> {
    let env = oodd::sim::EnvKind::CartPole;
    let train = dataset::generate_nominal(env, 200, 200, 1)?;
    let test = dataset::generate_nominal(env, 20, 200, 2)?;
    let stats = FeatureStats::compute(&train)?;
    let train_n: Vec<Tensor2> = train.iter().map(|t| normalize(t, &stats).observations).collect();
    let cfg = ForestConfig {
        n_trees: 20,
        max_samples: 5000,
        ..ForestConfig::default()
    };
    let forest = ForestModel::train(&train_n.iter().collect::<Vec<_>>(), &cfg)?;

    let rollout = RolloutConfig::default();
    let (mut forest_err, mut copy_err, mut n) = (0.0, 0.0, 0usize);
    for t in &test {
        let obs = normalize(t, &stats).observations;
        let preds = forest.rollout_series(&obs, &rollout, &mut stream(0))?;
        for (i, p) in preds.iter().enumerate() {
            let truth = obs.row(i + 1);
            forest_err += p.row(0).iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>();
            copy_err += obs.row(i).iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>();
            n += 1;
        }
    }
    println!("one-step mean L1 (normalized units): forest {:.4}, copy-last {:.4}", forest_err / n as f64, copy_err / n as f64);
    Ok(())
}
