//! Nominal and anomalous trajectory datasets.
//!
//! Trajectory `i` of a nominal set is simulated from seed `mix(seed, i)`.
//! Anomalous sets derive a per-kind base seed, and retry a trajectory with a
//! fresh attempt seed whenever the episode ends before the anomaly has
//! produced [`MIN_ANOMALOUS_STEPS`] observations.

mod store;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::{self, AnomalyKind, AnomalyParams, AnomalySpec};
use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::rng;
use crate::sim::{self, default_params, EnvKind, EnvParams, EnvState};

pub use store::{load, read_manifest, save, split_dir, MANIFEST_FILE};

/// Anomalous test trajectories keep at least this many post-injection steps.
pub const MIN_ANOMALOUS_STEPS: usize = 5;
const MAX_ATTEMPTS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    NominalTrain,
    NominalVal,
    AnomalousTest,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::NominalTrain => "nominal_train",
            Split::NominalVal => "nominal_val",
            Split::AnomalousTest => "anomalous_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Split::NominalTrain, Split::NominalVal, Split::AnomalousTest]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub env: EnvKind,
    /// Seed of the simulated episode (initial state and anomaly sampling).
    pub seed: u64,
    /// `T x d` observations as seen by the controller.
    pub observations: Tensor2,
    pub actions: Vec<usize>,
    pub inject_step: Option<usize>,
    pub anomaly: Option<AnomalySpec>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.rows() == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidArgument(format!("trajectory {}: {reason}", self.id)));
        if self.observations.rows() != self.actions.len() {
            return fail(format!(
                "{} observations but {} actions",
                self.observations.rows(),
                self.actions.len()
            ));
        }
        if self.obs_dim() != self.env.obs_dim() {
            return fail(format!("observation width {} for {}", self.obs_dim(), self.env));
        }
        if self.inject_step.is_some() != self.anomaly.is_some() {
            return fail("inject_step and anomaly must be set together".into());
        }
        if let (Some(k), Some(spec)) = (self.inject_step, &self.anomaly) {
            if k != spec.inject_step || k == 0 || k >= self.len() {
                return fail(format!("inject_step {k} invalid for length {}", self.len()));
            }
        }
        if !self.observations.is_finite() {
            return fail("non-finite observation".into());
        }
        Ok(())
    }
}

/// Per-feature standardization statistics computed on nominal training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Features whose training standard deviation was zero (divisor set to 1).
    pub constant_features: Vec<usize>,
}

impl FeatureStats {
    /// Pooled mean and population standard deviation over every timestep.
    pub fn compute(trajectories: &[Trajectory]) -> Result<Self> {
        let d = trajectories
            .first()
            .map(Trajectory::obs_dim)
            .ok_or_else(|| Error::EmptyDataset("no trajectories for feature statistics".into()))?;
        let mut sum = vec![0.0; d];
        let mut n = 0usize;
        for t in trajectories {
            for row in t.observations.iter_rows() {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyDataset("trajectories have no observations".into()));
        }
        let means: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0; d];
        for t in trajectories {
            for row in t.observations.iter_rows() {
                for j in 0..d {
                    let c = row[j] - means[j];
                    sq[j] += c * c;
                }
            }
        }
        let mut constant_features = Vec::new();
        let stds = sq
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let std = (s / n as f64).sqrt();
                if std > 1e-12 {
                    std
                } else {
                    constant_features.push(j);
                    1.0
                }
            })
            .collect();
        Ok(Self {
            means,
            stds,
            constant_features,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            means: vec![0.0; d],
            stds: vec![1.0; d],
            constant_features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: usize,
    pub file: String,
    pub seed: u64,
    pub len: usize,
    pub inject_step: Option<usize>,
    pub anomaly: Option<AnomalySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub env: EnvKind,
    pub split: Split,
    pub anomaly_kind: Option<AnomalyKind>,
    pub count: usize,
    pub horizon: usize,
    pub global_seed: u64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub constant_features: Vec<usize>,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl DatasetManifest {
    pub fn stats(&self) -> FeatureStats {
        FeatureStats {
            means: self.feature_means.clone(),
            stds: self.feature_stds.clone(),
            constant_features: self.constant_features.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(
        split: Split,
        anomaly_kind: Option<AnomalyKind>,
        horizon: usize,
        global_seed: u64,
        stats: &FeatureStats,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        let env = trajectories
            .first()
            .map(|t| t.env)
            .ok_or_else(|| Error::EmptyDataset(format!("{split} dataset")))?;
        let records = trajectories
            .iter()
            .map(|t| {
                t.validate()?;
                Ok(TrajectoryRecord {
                    id: t.id,
                    file: store::trajectory_file(t.id),
                    seed: t.seed,
                    len: t.len(),
                    inject_step: t.inject_step,
                    anomaly: t.anomaly.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest: DatasetManifest {
                env,
                split,
                anomaly_kind,
                count: trajectories.len(),
                horizon,
                global_seed,
                feature_means: stats.means.clone(),
                feature_stds: stats.stds.clone(),
                constant_features: stats.constant_features.clone(),
                trajectories: records,
            },
            trajectories,
        })
    }

    /// Trajectories standardized with the manifest statistics.
    pub fn normalized(&self) -> Vec<Trajectory> {
        let stats = self.manifest.stats();
        self.trajectories.iter().map(|t| normalize(t, &stats)).collect()
    }
}

/// Runs one episode, optionally switching to an anomalous variant at the
/// spec's injection step.
pub fn simulate(params: &EnvParams, seed: u64, anomaly: Option<&AnomalySpec>) -> Result<(Tensor2, Vec<usize>)> {
    let env = params.kind();
    let mut state = sim::reset(env, seed);
    let mut observations = Tensor2::zeros(0, env.obs_dim());
    let mut actions = Vec::with_capacity(params.horizon);
    let mut corruption = anomaly.map(AnomalySpec::corruption_rng);
    let mut active = *params;
    while !state.done {
        let t = state.step_index;
        let mut seen = state.obs.clone();
        if let (Some(spec), Some(rng)) = (anomaly, corruption.as_mut()) {
            if t == spec.inject_step
                && matches!(spec.params, AnomalyParams::Gravity { .. } | AnomalyParams::Components { .. })
            {
                active = anomaly::corrupt_dynamics(spec, params)?;
            }
            if spec.kind.is_sensor() {
                seen = anomaly::corrupt_observation(spec, &state.obs, t, rng)?;
            }
        }
        let view = EnvState {
            obs: seen,
            step_index: t,
            done: false,
        };
        let mut action = sim::nominal_policy(env, &view);
        if let (Some(spec), Some(rng)) = (anomaly, corruption.as_mut()) {
            if matches!(spec.kind, AnomalyKind::WindL2R | AnomalyKind::WindR2L) && t >= spec.inject_step {
                action = anomaly::corrupt_action(spec, action, env, rng)?;
            }
        }
        observations.push_row(&view.obs)?;
        actions.push(action.0);
        state = sim::step(&active, &state, action)?;
    }
    Ok((observations, actions))
}

/// Seed of nominal trajectory `id`.
pub fn nominal_seed(seed: u64, id: usize) -> u64 {
    rng::mix(seed, id as u64)
}

pub fn generate_nominal(env: EnvKind, count: usize, horizon: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    let params = default_params(env).with_horizon(horizon);
    (0..count)
        .into_par_iter()
        .map(|id| {
            let traj_seed = nominal_seed(seed, id);
            let (observations, actions) = simulate(&params, traj_seed, None)?;
            Ok(Trajectory {
                id,
                env,
                seed: traj_seed,
                observations,
                actions,
                inject_step: None,
                anomaly: None,
            })
        })
        .collect()
}

pub fn generate_anomalous(
    env: EnvKind,
    kind: AnomalyKind,
    count: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    let params = default_params(env).with_horizon(horizon);
    let base = rng::mix_label(seed, kind.name());
    (0..count)
        .into_par_iter()
        .map(|id| {
            let slot = rng::mix(base, id as u64);
            for attempt in 0..MAX_ATTEMPTS {
                let traj_seed = rng::mix(slot, attempt);
                let spec = anomaly::sample_spec(kind, env, horizon, rng::mix(traj_seed, 1))?;
                let (observations, actions) = simulate(&params, traj_seed, Some(&spec))?;
                if spec.inject_step + MIN_ANOMALOUS_STEPS <= observations.rows() {
                    return Ok(Trajectory {
                        id,
                        env,
                        seed: traj_seed,
                        observations,
                        actions,
                        inject_step: Some(spec.inject_step),
                        anomaly: Some(spec),
                    });
                }
            }
            Err(Error::InvalidArgument(format!(
                "could not place a {kind} anomaly inside a {env} episode after {MAX_ATTEMPTS} attempts"
            )))
        })
        .collect()
}

pub fn normalize(traj: &Trajectory, stats: &FeatureStats) -> Trajectory {
    let mut out = traj.clone();
    for i in 0..out.observations.rows() {
        let row = out.observations.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - stats.means[j]) / stats.stds[j];
        }
    }
    out
}

pub fn denormalize(traj: &Trajectory, stats: &FeatureStats) -> Trajectory {
    let mut out = traj.clone();
    for i in 0..out.observations.rows() {
        let row = out.observations.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * stats.stds[j] + stats.means[j];
        }
    }
    out
}
