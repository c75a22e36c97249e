//! Injects each anomaly kind into a CartPole episode and shows how far the
//! observed trajectory departs from the nominal one after injection.

use oodd::anomaly::{sample_spec, AnomalyKind};
use oodd::dataset::simulate;
use oodd::sim::{default_params, EnvKind};

fn main() -> oodd::Result<()> {
    let env = EnvKind::CartPole;
    let params = default_params(env);
    let seed = 42;
    let (nominal, _) = simulate(&params, seed, None)?;
    for kind in AnomalyKind::ALL {
        let spec = sample_spec(kind, env, params.horizon, 7)?;
        let (obs, _) = simulate(&params, seed, Some(&spec))?;
        let n = obs.rows().min(nominal.rows());
        let gap: f64 = (spec.inject_step..n)
            .map(|t| {
                obs.row(t)
                    .iter()
                    .zip(nominal.row(t))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / (n - spec.inject_step).max(1) as f64;
        println!(
            "{:>22} ({:>8}): inject at {:>3}, length {:>3}, mean L1 gap after injection {gap:.4}",
            kind.name(),
            kind.group().name(),
            spec.inject_step,
            obs.rows()
        );
    }
    Ok(())
}
