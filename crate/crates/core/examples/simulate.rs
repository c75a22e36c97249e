//! Runs nominal episodes of both environments under the scripted controllers
//! and prints episode lengths and per-feature ranges.

use oodd::dataset::simulate;
use oodd::sim::{default_params, EnvKind};

fn main() -> oodd::Result<()> {
    for env in EnvKind::ALL {
        let params = default_params(env);
        let mut lengths = Vec::new();
        let mut lo = vec![f64::INFINITY; env.obs_dim()];
        let mut hi = vec![f64::NEG_INFINITY; env.obs_dim()];
        for seed in 0..20 {
            let (obs, _actions) = simulate(&params, seed, None)?;
            lengths.push(obs.rows());
            for row in obs.iter_rows() {
                for (j, v) in row.iter().enumerate() {
                    lo[j] = lo[j].min(*v);
                    hi[j] = hi[j].max(*v);
                }
            }
        }
        println!("{env}: episode lengths {lengths:?}");
        for j in 0..env.obs_dim() {
            println!("  o_{j} in [{:+.4}, {:+.4}]", lo[j], hi[j]);
        }
    }
    Ok(())
}
