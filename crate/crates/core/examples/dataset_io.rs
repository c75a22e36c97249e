//! Generates small nominal and anomalous datasets, writes them to disk and
//! reads them back.

use oodd::anomaly::AnomalyKind;
use oodd::dataset::{self, Dataset, FeatureStats, Split};
use oodd::sim::EnvKind;

fn main() -> oodd::Result<()> {
    let root = std::env::temp_dir().join("oodd-dataset-example");
    let env = EnvKind::Acrobot;
    let train = dataset::generate_nominal(env, 50, 200, 1)?;
    let stats = FeatureStats::compute(&train)?;
    println!("feature means {:?}", stats.means);
    println!("feature stds  {:?}", stats.stds);

    let dir = dataset::split_dir(&root, env, Split::NominalTrain, None);
    dataset::save(&Dataset::new(Split::NominalTrain, None, 200, 1, &stats, train)?, &dir)?;

    let kind = AnomalyKind::SensorDrift;
    let test = dataset::generate_anomalous(env, kind, 10, 200, 2)?;
    let test_dir = dataset::split_dir(&root, env, Split::AnomalousTest, Some(kind));
    dataset::save(&Dataset::new(Split::AnomalousTest, Some(kind), 200, 2, &stats, test)?, &test_dir)?;

    let back = dataset::load(&test_dir)?;
    for t in back.trajectories.iter().take(5) {
        println!("trajectory {}: {} steps, injected at {:?}", t.id, t.len(), t.inject_step);
    }
    println!("wrote {}", root.display());
    Ok(())
}
