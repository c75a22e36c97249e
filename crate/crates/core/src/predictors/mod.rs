//! Autoregressive dynamics predictors.
//!
//! Every predictor implements [`Forecaster`]: given the observed prefix
//! `obs[..=last]`, it returns samples of the observation `delta` steps ahead.

mod forest;
mod loss;
mod net;
mod neural;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::rng::Rng;

pub use forest::{ForestConfig, ForestModel, Node, RandomForest, RegressionTree};
pub use loss::{quantile_huber, quantile_huber_grad};
pub use net::{FeatureNet, Head, WIDTH};
pub use neural::{NetKind, NeuralModel, TrainConfig, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Steps between the last observed point and the predicted one.
    pub delta: usize,
    /// Samples per model; deterministic models always return one.
    pub samples: usize,
    /// Feed the per-step sample mean forward instead of each chain's sample.
    pub mean_sampling: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            delta: 1,
            samples: 8,
            mean_sampling: false,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 {
            return Err(Error::InvalidArgument("delta must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("samples must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_history(obs: &Tensor2, lasts: &[usize], dim: usize) -> Result<()> {
    if obs.cols() != dim {
        return Err(Error::ShapeMismatch(format!("model expects {dim} features, got {}", obs.cols())));
    }
    if obs.rows() == 0 {
        return Err(Error::HistoryTooShort { needed: 1, got: 0 });
    }
    if let Some(&bad) = lasts.iter().find(|&&l| l >= obs.rows()) {
        return Err(Error::HistoryTooShort {
            needed: bad + 1,
            got: obs.rows(),
        });
    }
    Ok(())
}

pub trait Forecaster: Send + Sync {
    fn dim(&self) -> usize;

    fn is_stochastic(&self) -> bool;

    /// For each `last`, samples (`M x d`) of the observation at
    /// `last + delta` given `obs[..=last]`. Random draws are consumed in a
    /// fixed order over steps, features and rows.
    fn rollout_from(&self, obs: &Tensor2, lasts: &[usize], cfg: &RolloutConfig, rng: &mut Rng) -> Result<Vec<Tensor2>>;

    /// Samples of the observation `delta` steps after the end of `history`.
    fn rollout(&self, history: &Tensor2, cfg: &RolloutConfig, rng: &mut Rng) -> Result<Tensor2> {
        if history.rows() == 0 {
            return Err(Error::HistoryTooShort { needed: 1, got: 0 });
        }
        let mut out = self.rollout_from(history, &[history.rows() - 1], cfg, rng)?;
        Ok(out.pop().expect("one start"))
    }

    /// Samples for every predictable index `t ∈ [delta, T)` of a trajectory.
    fn rollout_series(&self, obs: &Tensor2, cfg: &RolloutConfig, rng: &mut Rng) -> Result<Vec<Tensor2>> {
        if obs.rows() <= cfg.delta {
            return Err(Error::HistoryTooShort {
                needed: cfg.delta + 1,
                got: obs.rows(),
            });
        }
        let lasts: Vec<usize> = (0..obs.rows() - cfg.delta).collect();
        self.rollout_from(obs, &lasts, cfg, rng)
    }
}

/// Detector model families compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "riqn")]
    Riqn,
    #[serde(rename = "riqn_ms")]
    RiqnMs,
    #[serde(rename = "npn")]
    Npn,
    #[serde(rename = "nriqn")]
    Nriqn,
    #[serde(rename = "rf")]
    Forest,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Riqn,
        ModelKind::RiqnMs,
        ModelKind::Npn,
        ModelKind::Nriqn,
        ModelKind::Forest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Riqn => "riqn",
            ModelKind::RiqnMs => "riqn_ms",
            ModelKind::Npn => "npn",
            ModelKind::Nriqn => "nriqn",
            ModelKind::Forest => "rf",
        }
    }

    /// The kind whose trained members this kind evaluates with; mean
    /// sampling reuses plain RIQN weights.
    pub fn trained_kind(self) -> ModelKind {
        match self {
            ModelKind::RiqnMs => ModelKind::Riqn,
            k => k,
        }
    }

    pub fn mean_sampling(self) -> bool {
        matches!(self, ModelKind::RiqnMs)
    }

    pub fn net_kind(self) -> Option<NetKind> {
        match self {
            ModelKind::Riqn | ModelKind::RiqnMs => Some(NetKind::Riqn),
            ModelKind::Npn => Some(NetKind::Npn),
            ModelKind::Nriqn => Some(NetKind::Nriqn),
            ModelKind::Forest => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{s}`")))
    }
}

/// A trained predictor of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Predictor {
    Neural(NeuralModel),
    Forest(ForestModel),
}

impl Predictor {
    /// Trains one member of `kind` on normalized trajectories.
    pub fn train(
        kind: ModelKind,
        train: &[&Tensor2],
        val: &[&Tensor2],
        net_cfg: &TrainConfig,
        forest_cfg: &ForestConfig,
    ) -> Result<Self> {
        match kind.trained_kind().net_kind() {
            Some(net) => NeuralModel::train(net, train, val, net_cfg).map(Predictor::Neural),
            None => ForestModel::train(train, forest_cfg).map(Predictor::Forest),
        }
    }

    fn inner(&self) -> &dyn Forecaster {
        match self {
            Predictor::Neural(m) => m,
            Predictor::Forest(m) => m,
        }
    }
}

impl Forecaster for Predictor {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn is_stochastic(&self) -> bool {
        self.inner().is_stochastic()
    }

    fn rollout_from(&self, obs: &Tensor2, lasts: &[usize], cfg: &RolloutConfig, rng: &mut Rng) -> Result<Vec<Tensor2>> {
        self.inner().rollout_from(obs, lasts, cfg, rng)
    }
}
