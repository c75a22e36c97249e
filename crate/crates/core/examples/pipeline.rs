//! Runs the whole experiment pipeline on a deliberately small configuration
//! and prints the resulting report.

use oodd::anomaly::AnomalyKind;
use oodd::pipeline::{DataConfig, ExperimentConfig, Pipeline, Stage, SweepPlan};
use oodd::predictors::{ForestConfig, ModelKind, TrainConfig};
use oodd::sim::EnvKind;

fn main() -> oodd::Result<()> {
    let out = std::env::temp_dir().join("oodd-pipeline-example");
    let cfg = ExperimentConfig {
        envs: vec![EnvKind::CartPole],
        anomalies: vec![AnomalyKind::SensorShutdown, AnomalyKind::WindL2R],
        data: DataConfig {
            train: 100,
            val: 20,
            test: 10,
            horizon: 200,
        },
        models: vec![ModelKind::Riqn, ModelKind::RiqnMs, ModelKind::Forest],
        plan: SweepPlan {
            deltas: vec![1, 10],
            samples: vec![8],
            ensembles: vec![1, 2],
        },
        train: TrainConfig {
            epochs: 3,
            batches_per_epoch: Some(20),
            ..TrainConfig::default()
        },
        forest: ForestConfig {
            n_trees: 10,
            max_samples: 4000,
            ..ForestConfig::default()
        },
        nominal_scored: 20,
        ..ExperimentConfig::default()
    }
    .with_out(&out);
    let pipeline = Pipeline::new(cfg)?;
    pipeline.run(Stage::All)?;
    let report = std::fs::read_to_string(pipeline.report_dir().join("metrics.csv"))
        .map_err(|e| oodd::Error::InvalidArgument(e.to_string()))?;
    print!("{report}");
    Ok(())
}
