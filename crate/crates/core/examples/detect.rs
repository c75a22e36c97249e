//! Scores anomalous CartPole episodes with a small RIQN ensemble, raises
//! CUSUM alarms and reports AUC, delay and false-alarm rate per anomaly kind.

use oodd::anomaly::AnomalyKind;
use oodd::dataset::{self, normalize, FeatureStats, Trajectory};
use oodd::detection::{cusum_alarms, nominal_score_stats, score_all, CusumConfig, Ensemble};
use oodd::evaluation::{aggregate, evaluate_series};
use oodd::nn::Tensor2;
use oodd::predictors::{NetKind, NeuralModel, RolloutConfig, TrainConfig};
use oodd::sim::EnvKind;

fn main() -> oodd::Result<()> {
    let env = EnvKind::CartPole;
    let train = dataset::generate_nominal(env, 300, 200, 1)?;
    let val = dataset::generate_nominal(env, 40, 200, 2)?;
    let stats = FeatureStats::compute(&train)?;
    let norm = |set: &[Trajectory]| -> Vec<Trajectory> { set.iter().map(|t| normalize(t, &stats)).collect() };
    let (train_n, val_n) = (norm(&train), norm(&val));
    let train_obs: Vec<&Tensor2> = train_n.iter().map(|t| &t.observations).collect();
    let val_obs: Vec<&Tensor2> = val_n.iter().map(|t| &t.observations).collect();

    let members = [0.01, 0.001]
        .iter()
        .enumerate()
        .map(|(k, &lr)| {
            let cfg = TrainConfig {
                epochs: 4,
                batches_per_epoch: Some(30),
                lr,
                seed: k as u64,
                ..TrainConfig::default()
            };
            NeuralModel::train(NetKind::Riqn, &train_obs, &val_obs, &cfg)
        })
        .collect::<oodd::Result<Vec<_>>>()?;
    let ensemble = Ensemble::new(members)?;

    let rollout = RolloutConfig::default();
    let nominal: Vec<(usize, &Tensor2)> = val_n.iter().map(|t| (t.id, &t.observations)).collect();
    let nominal_stats = nominal_score_stats(&ensemble, &nominal, &rollout, 3)?;
    let cusum = CusumConfig::default();

    for kind in AnomalyKind::ALL {
        let test = norm(&dataset::generate_anomalous(env, kind, 10, 200, 4)?);
        let items: Vec<(usize, &Tensor2)> = test.iter().map(|t| (t.id, &t.observations)).collect();
        let series = score_all(&ensemble, &items, &rollout, 5)?;
        let evals = series
            .iter()
            .zip(&test)
            .map(|(s, t)| {
                let alarms = cusum_alarms(s, &cusum, &nominal_stats);
                evaluate_series(s, t.inject_step.expect("anomalous"), &alarms)
            })
            .collect::<oodd::Result<Vec<_>>>()?;
        let summary = aggregate(&evals)?;
        println!(
            "{:>22}: AUC {:.3}  delay {:>6}  FAR {:.3}  miss {:.2}",
            kind.name(),
            summary.auc,
            summary.delay.map(|d| format!("{d:.1}")).unwrap_or_else(|| "-".into()),
            summary.far,
            summary.miss_rate
        );
    }
    Ok(())
}
