use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyKind;
use crate::detection::CusumConfig;
use crate::error::{Error, Result};
use crate::predictors::{ForestConfig, ModelKind, TrainConfig};
use crate::sim::{EnvKind, DESK_HORIZON, FULL_HORIZON};

/// Dataset sizes and episode horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    /// Anomalous test trajectories per (env, anomaly kind).
    pub test: usize,
    pub horizon: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Scale::Desk.data()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn data(self) -> DataConfig {
        match self {
            Scale::Desk => DataConfig {
                train: 2000,
                val: 200,
                test: 100,
                horizon: DESK_HORIZON,
            },
            Scale::Full => DataConfig {
                train: 10_000,
                val: 1000,
                test: 1000,
                horizon: FULL_HORIZON,
            },
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Config {
                field: "scale".into(),
                reason: format!("expected `desk` or `full`, got `{s}`"),
            }),
        }
    }
}

/// Cross product of evaluation settings. Deterministic models collapse the
/// sample axis to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub deltas: Vec<usize>,
    pub samples: Vec<usize>,
    pub ensembles: Vec<usize>,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            deltas: vec![1, 10, 20],
            samples: vec![8],
            ensembles: vec![5],
        }
    }
}

/// Everything a pipeline run depends on. Parsed from JSON; omitted fields
/// take the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub envs: Vec<EnvKind>,
    pub anomalies: Vec<AnomalyKind>,
    pub data: DataConfig,
    pub models: Vec<ModelKind>,
    pub plan: SweepPlan,
    /// Member `k` trains with `learning_rates[k % len]`.
    pub learning_rates: Vec<f64>,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub cusum: CusumConfig,
    /// Nominal validation trajectories scored for CUSUM standardization.
    pub nominal_scored: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            envs: EnvKind::ALL.to_vec(),
            anomalies: AnomalyKind::ALL.to_vec(),
            data: DataConfig::default(),
            models: ModelKind::ALL.to_vec(),
            plan: SweepPlan::default(),
            learning_rates: vec![0.01],
            train: TrainConfig {
                epochs: 30,
                batches_per_epoch: Some(50),
                ..TrainConfig::default()
            },
            forest: ForestConfig::default(),
            cusum: CusumConfig::default(),
            nominal_scored: 100,
            seed: 0,
            out: PathBuf::from("runs/desk"),
            jobs: 0,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scale: Option<Scale>,
}

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error("<config>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| config_error(&path.display().to_string(), e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_out(mut self, out: impl Into<PathBuf>) -> Self {
        self.out = out.into();
        self
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(scale) = o.scale {
            self.data = scale.data();
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |field: &str, len: usize| {
            if len == 0 {
                Err(config_error(field, "must not be empty"))
            } else {
                Ok(())
            }
        };
        nonempty("envs", self.envs.len())?;
        nonempty("anomalies", self.anomalies.len())?;
        nonempty("models", self.models.len())?;
        nonempty("plan.deltas", self.plan.deltas.len())?;
        nonempty("plan.samples", self.plan.samples.len())?;
        nonempty("plan.ensembles", self.plan.ensembles.len())?;
        nonempty("learning_rates", self.learning_rates.len())?;
        if self.plan.deltas.contains(&0) {
            return Err(config_error("plan.deltas", "horizons must be at least 1"));
        }
        if self.plan.samples.contains(&0) {
            return Err(config_error("plan.samples", "sample sizes must be at least 1"));
        }
        if self.plan.ensembles.contains(&0) {
            return Err(config_error("plan.ensembles", "ensemble sizes must be at least 1"));
        }
        if let Some(lr) = self.learning_rates.iter().find(|lr| !(**lr > 0.0)) {
            return Err(config_error("learning_rates", format!("{lr} is not positive")));
        }
        if self.data.train == 0 || self.data.val == 0 || self.data.test == 0 {
            return Err(config_error("data", "train, val and test counts must be at least 1"));
        }
        if self.nominal_scored == 0 {
            return Err(config_error("nominal_scored", "must be at least 1"));
        }
        if self.data.horizon < 10 {
            return Err(config_error("data.horizon", "must be at least 10"));
        }
        if let Some(&d) = self.plan.deltas.iter().find(|&&d| d >= self.data.horizon) {
            return Err(config_error("plan.deltas", format!("delta {d} is not below the horizon")));
        }
        self.train.validate()?;
        self.cusum.validate()?;
        if self.forest.n_trees == 0 || self.forest.window == 0 {
            return Err(config_error("forest", "n_trees and window must be at least 1"));
        }
        Ok(())
    }

    pub fn max_ensemble(&self) -> usize {
        self.plan.ensembles.iter().copied().max().unwrap_or(1)
    }

    /// Distinct model families that need trained members.
    pub fn trained_kinds(&self) -> Vec<ModelKind> {
        let mut kinds: Vec<ModelKind> = self.models.iter().map(|m| m.trained_kind()).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    pub fn learning_rate(&self, member: usize) -> f64 {
        self.learning_rates[member % self.learning_rates.len()]
    }
}
