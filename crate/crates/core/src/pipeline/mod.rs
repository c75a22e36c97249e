//! End-to-end experiment driver: data generation, training, scoring, CUSUM
//! detection, evaluation and report emission.
//!
//! Every stage reads its inputs from and writes its outputs under
//! `config.out`:
//!
//! ```text
//! data/<env>/<split>[/<anomaly>]/        datasets
//! models/<env>/<kind>/member_<k>.json    checkpoints (+ .stamp.json)
//! scores/<env>/<model>/d<Δ>_m<M>/        per-member score CSVs (+ <set>.stamp.json)
//! alarms/<env>/<model>/d<Δ>_m<M>_e<e>/   alarm CSVs and nominal stats
//! reports/                               metrics.json, metrics.csv, groups.csv, long.csv
//! run_manifest.json                      resolved config and code version
//! ```
//!
//! Stages skip work whose stamp matches the current inputs, so rerunning a
//! stage with an unchanged config is cheap and yields identical files.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ExperimentConfig, Overrides, Scale, SweepPlan};

use crate::anomaly::AnomalyKind;
use crate::dataset::{self, Dataset, FeatureStats, Split};
use crate::detection::{self, NominalStats, ScoreSeries};
use crate::error::{Error, Result};
use crate::evaluation::{self, Cell, MetricRow};
use crate::nn::{checkpoint, Tensor2};
use crate::predictors::{ModelKind, Predictor, RolloutConfig};
use crate::rng::{mix, mix_label};
use crate::sim::EnvKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    Train,
    Score,
    Detect,
    Eval,
    Report,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Detect => "detect",
            Stage::Eval => "eval",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Stage::GenData,
            Stage::Train,
            Stage::Score,
            Stage::Detect,
            Stage::Eval,
            Stage::Report,
            Stage::All,
        ]
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

/// Written at the start of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
}

/// Inputs that determine a trained member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MemberStamp {
    env: EnvKind,
    kind: ModelKind,
    member: usize,
    data_seed: u64,
    train_count: usize,
    val_count: usize,
    horizon: usize,
    train: crate::predictors::TrainConfig,
    forest: crate::predictors::ForestConfig,
}

/// Inputs that determine one scoring pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreStamp {
    members: Vec<MemberStamp>,
    rollout: RolloutConfig,
    seed: u64,
    set: String,
    count: usize,
}

/// Models that produce random samples and therefore sweep `M`.
pub fn is_stochastic(kind: ModelKind) -> bool {
    kind.trained_kind().net_kind().is_some_and(|n| n.quantile())
}

/// Effective sample sizes for a model: deterministic models collapse to one.
pub fn sample_sizes(kind: ModelKind, plan: &SweepPlan) -> Vec<usize> {
    if is_stochastic(kind) {
        let mut m = plan.samples.clone();
        m.sort_unstable();
        m.dedup();
        m
    } else {
        vec![1]
    }
}

const NOMINAL_SET: &str = "nominal_val";

pub struct Pipeline {
    cfg: ExperimentConfig,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out
    }

    // ---- paths -------------------------------------------------------------

    pub fn data_root(&self) -> PathBuf {
        self.cfg.out.join("data")
    }

    pub fn model_path(&self, env: EnvKind, kind: ModelKind, member: usize) -> PathBuf {
        self.cfg
            .out
            .join("models")
            .join(env.name())
            .join(kind.trained_kind().name())
            .join(format!("member_{member}.json"))
    }

    fn model_stamp_path(&self, env: EnvKind, kind: ModelKind, member: usize) -> PathBuf {
        self.model_path(env, kind, member).with_extension("stamp.json")
    }

    pub fn score_dir(&self, env: EnvKind, model: ModelKind, delta: usize, samples: usize) -> PathBuf {
        self.cfg
            .out
            .join("scores")
            .join(env.name())
            .join(model.name())
            .join(format!("d{delta}_m{samples}"))
    }

    pub fn score_path(&self, env: EnvKind, model: ModelKind, delta: usize, samples: usize, member: usize, set: &str) -> PathBuf {
        self.score_dir(env, model, delta, samples)
            .join(format!("member_{member}"))
            .join(format!("{set}.csv"))
    }

    pub fn alarm_dir(&self, cell: &Cell) -> PathBuf {
        self.cfg
            .out
            .join("alarms")
            .join(cell.env.name())
            .join(cell.model.name())
            .join(format!("d{}_m{}_e{}", cell.delta, cell.samples, cell.ensemble))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.cfg.out.join("reports")
    }

    // ---- sweep ------------------------------------------------------------

    /// Every report cell, in report order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &env in &self.cfg.envs {
            for &model in &self.cfg.models {
                for &delta in &self.cfg.plan.deltas {
                    for samples in sample_sizes(model, &self.cfg.plan) {
                        for &ensemble in &self.cfg.plan.ensembles {
                            cells.push(Cell {
                                env,
                                model,
                                delta,
                                samples,
                                ensemble,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    /// Distinct scoring passes `(env, model, Δ, M)`; each covers all members.
    fn score_passes(&self) -> Vec<(EnvKind, ModelKind, usize, usize)> {
        let mut passes: Vec<_> = self
            .cells()
            .into_iter()
            .map(|c| (c.env, c.model, c.delta, c.samples))
            .collect();
        passes.dedup();
        passes
    }

    fn split_seed(&self, split: Split, env: EnvKind) -> u64 {
        mix_label(mix_label(self.cfg.seed, split.name()), env.name())
    }

    fn member_seed(&self, env: EnvKind, kind: ModelKind, member: usize) -> u64 {
        let base = mix_label(self.cfg.seed, "train");
        mix(mix_label(base, &format!("{env}/{}", kind.trained_kind())), member as u64)
    }

    fn score_seed(&self, env: EnvKind, model: ModelKind, delta: usize, samples: usize, set: &str) -> u64 {
        let base = mix_label(self.cfg.seed, "score");
        mix_label(base, &format!("{env}/{model}/d{delta}/m{samples}/{set}"))
    }

    // ---- stages -----------------------------------------------------------

    /// Runs a stage inside a worker pool sized by `jobs`, after writing the
    /// run manifest.
    pub fn run(&self, stage: Stage) -> Result<()> {
        self.write_manifest(stage)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        pool.install(|| match stage {
            Stage::GenData => self.gen_data(),
            Stage::Train => self.train(),
            Stage::Score => self.score(),
            Stage::Detect => self.detect(),
            Stage::Eval => self.eval().map(|_| ()),
            Stage::Report => self.report(),
            Stage::All => self.all(),
        })
    }

    fn write_manifest(&self, stage: Stage) -> Result<()> {
        let manifest = RunManifest {
            command: stage.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.cfg.clone(),
        };
        write_json(&self.cfg.out.join("run_manifest.json"), &manifest)
    }

    pub fn all(&self) -> Result<()> {
        self.gen_data()?;
        self.train()?;
        self.score()?;
        self.detect()?;
        self.eval()?;
        self.report()
    }

    pub fn gen_data(&self) -> Result<()> {
        let d = &self.cfg.data;
        for &env in &self.cfg.envs {
            let train_dir = self.dataset_dir(env, Split::NominalTrain, None);
            let train_seed = self.split_seed(Split::NominalTrain, env);
            let stats = match self.existing(&train_dir, d.train, train_seed)? {
                Some(m) => m.stats(),
                None => {
                    info!("generating {} {env} training trajectories", d.train);
                    let trajs = dataset::generate_nominal(env, d.train, d.horizon, train_seed)?;
                    let stats = FeatureStats::compute(&trajs)?;
                    save_dataset(Split::NominalTrain, None, d.horizon, train_seed, &stats, trajs, &train_dir)?;
                    stats
                }
            };
            let val_dir = self.dataset_dir(env, Split::NominalVal, None);
            let val_seed = self.split_seed(Split::NominalVal, env);
            if self.existing(&val_dir, d.val, val_seed)?.is_none() {
                info!("generating {} {env} validation trajectories", d.val);
                let trajs = dataset::generate_nominal(env, d.val, d.horizon, val_seed)?;
                save_dataset(Split::NominalVal, None, d.horizon, val_seed, &stats, trajs, &val_dir)?;
            }
            let test_seed = self.split_seed(Split::AnomalousTest, env);
            for &kind in &self.cfg.anomalies {
                let dir = self.dataset_dir(env, Split::AnomalousTest, Some(kind));
                if self.existing(&dir, d.test, test_seed)?.is_none() {
                    info!("generating {} {env} {kind} test trajectories", d.test);
                    let trajs = dataset::generate_anomalous(env, kind, d.test, d.horizon, test_seed)?;
                    save_dataset(Split::AnomalousTest, Some(kind), d.horizon, test_seed, &stats, trajs, &dir)?;
                }
            }
        }
        Ok(())
    }

    fn dataset_dir(&self, env: EnvKind, split: Split, kind: Option<AnomalyKind>) -> PathBuf {
        dataset::split_dir(&self.data_root(), env, split, kind)
    }

    /// The manifest of a stored dataset matching the config, if any.
    fn existing(&self, dir: &Path, count: usize, seed: u64) -> Result<Option<dataset::DatasetManifest>> {
        if !dir.join(dataset::MANIFEST_FILE).exists() {
            return Ok(None);
        }
        let m = dataset::read_manifest(dir)?;
        let matches = m.count == count && m.global_seed == seed && m.horizon == self.cfg.data.horizon;
        if matches {
            info!("{} is up to date", dir.display());
        }
        Ok(matches.then_some(m))
    }

    fn load_dataset(&self, env: EnvKind, split: Split, kind: Option<AnomalyKind>) -> Result<Dataset> {
        let dir = self.dataset_dir(env, split, kind);
        let manifest = dir.join(dataset::MANIFEST_FILE);
        if !manifest.exists() {
            return Err(Error::MissingArtifact(manifest));
        }
        dataset::load(&dir)
    }

    fn member_stamp(&self, env: EnvKind, kind: ModelKind, member: usize) -> MemberStamp {
        let seed = self.member_seed(env, kind, member);
        MemberStamp {
            env,
            kind: kind.trained_kind(),
            member,
            data_seed: self.cfg.seed,
            train_count: self.cfg.data.train,
            val_count: self.cfg.data.val,
            horizon: self.cfg.data.horizon,
            train: crate::predictors::TrainConfig {
                lr: self.cfg.learning_rate(member),
                seed,
                ..self.cfg.train.clone()
            },
            forest: crate::predictors::ForestConfig {
                seed,
                ..self.cfg.forest.clone()
            },
        }
    }

    fn member_is_current(&self, stamp: &MemberStamp) -> bool {
        let path = self.model_path(stamp.env, stamp.kind, stamp.member);
        let stamp_path = self.model_stamp_path(stamp.env, stamp.kind, stamp.member);
        path.exists() && checkpoint::load::<MemberStamp>(&stamp_path).is_ok_and(|s| &s == stamp)
    }

    pub fn train(&self) -> Result<()> {
        let members = self.cfg.max_ensemble();
        for &env in &self.cfg.envs {
            let pending: Vec<MemberStamp> = self
                .cfg
                .trained_kinds()
                .into_iter()
                .flat_map(|kind| (0..members).map(move |k| (kind, k)))
                .map(|(kind, k)| self.member_stamp(env, kind, k))
                .filter(|s| !self.member_is_current(s))
                .collect();
            if pending.is_empty() {
                info!("{env} models are up to date");
                continue;
            }
            let train = self.load_dataset(env, Split::NominalTrain, None)?.normalized();
            let val = self.load_dataset(env, Split::NominalVal, None)?.normalized();
            let train: Vec<&Tensor2> = train.iter().map(|t| &t.observations).collect();
            let val: Vec<&Tensor2> = val.iter().map(|t| &t.observations).collect();
            pending.par_iter().try_for_each(|stamp| {
                info!("training {env} {} member {}", stamp.kind, stamp.member);
                let model = Predictor::train(stamp.kind, &train, &val, &stamp.train, &stamp.forest)?;
                checkpoint::save(&self.model_path(env, stamp.kind, stamp.member), &model)?;
                checkpoint::save(&self.model_stamp_path(env, stamp.kind, stamp.member), stamp)
            })?;
        }
        Ok(())
    }

    fn require_models(&self, env: EnvKind, kind: ModelKind, members: usize) -> Result<()> {
        for k in 0..members {
            let path = self.model_path(env, kind, k);
            if !path.exists() {
                return Err(Error::MissingArtifact(path));
            }
        }
        Ok(())
    }

    fn require_all_models(&self) -> Result<()> {
        for &env in &self.cfg.envs {
            for kind in self.cfg.trained_kinds() {
                self.require_models(env, kind, self.cfg.max_ensemble())?;
            }
        }
        Ok(())
    }

    fn score_sets(&self) -> Vec<String> {
        std::iter::once(NOMINAL_SET.to_string())
            .chain(self.cfg.anomalies.iter().map(|k| k.name().to_string()))
            .collect()
    }

    pub fn score(&self) -> Result<()> {
        self.require_all_models()?;
        let members = self.cfg.max_ensemble();
        let nominal_count = self.cfg.data.val.min(self.cfg.nominal_scored);
        let sets = self.score_sets();
        for (env, model, delta, samples) in self.score_passes() {
            let rollout = RolloutConfig {
                delta,
                samples,
                mean_sampling: model.mean_sampling(),
            };
            let member_stamps: Vec<MemberStamp> = (0..members).map(|k| self.member_stamp(env, model, k)).collect();
            let dir = self.score_dir(env, model, delta, samples);
            let mut predictors: Option<Vec<Predictor>> = None;
            for set in &sets {
                let count = if set == NOMINAL_SET { nominal_count } else { self.cfg.data.test };
                let stamp = ScoreStamp {
                    members: member_stamps.clone(),
                    rollout,
                    seed: self.cfg.seed,
                    set: set.clone(),
                    count,
                };
                let stamp_path = dir.join(format!("{set}.stamp.json"));
                let present = (0..members).all(|k| self.score_path(env, model, delta, samples, k, set).exists());
                if present && checkpoint::load::<ScoreStamp>(&stamp_path).is_ok_and(|s| s == stamp) {
                    continue;
                }
                info!("scoring {env} {model} delta={delta} M={samples} on {set}");
                if predictors.is_none() {
                    predictors = Some(
                        (0..members)
                            .map(|k| checkpoint::load(&self.model_path(env, model, k)))
                            .collect::<Result<_>>()?,
                    );
                }
                let data = if set == NOMINAL_SET {
                    self.load_dataset(env, Split::NominalVal, None)?
                } else {
                    self.load_dataset(env, Split::AnomalousTest, Some(set.parse()?))?
                };
                let mut trajs = data.normalized();
                trajs.truncate(count);
                let seed = self.score_seed(env, model, delta, samples, set);
                for (k, p) in predictors.iter().flatten().enumerate() {
                    let series: Vec<ScoreSeries> = trajs
                        .par_iter()
                        .map(|t| detection::score_member(p, k, &t.observations, t.id, &rollout, seed))
                        .collect::<Result<_>>()?;
                    detection::write_scores(&self.score_path(env, model, delta, samples, k, set), &series)?;
                }
                write_json(&stamp_path, &stamp)?;
            }
        }
        Ok(())
    }

    /// Ensemble scores of a set for a cell: members `0..e` averaged.
    fn ensemble_scores(&self, cell: &Cell, set: &str) -> Result<Vec<ScoreSeries>> {
        let per_member = (0..cell.ensemble)
            .map(|k| {
                let path = self.score_path(cell.env, cell.model, cell.delta, cell.samples, k, set);
                if !path.exists() {
                    return Err(Error::MissingArtifact(path));
                }
                detection::read_scores(&path, cell.delta, cell.samples)
            })
            .collect::<Result<Vec<_>>>()?;
        (0..per_member[0].len())
            .map(|i| {
                let series: Vec<ScoreSeries> = per_member
                    .iter()
                    .map(|m| {
                        m.get(i).cloned().ok_or_else(|| {
                            Error::ShapeMismatch(format!("member score files for {set} differ in length"))
                        })
                    })
                    .collect::<Result<_>>()?;
                detection::combine_members(&series)
            })
            .collect()
    }

    pub fn detect(&self) -> Result<()> {
        self.require_all_models()?;
        for cell in self.cells() {
            let nominal = self.ensemble_scores(&cell, NOMINAL_SET)?;
            let stats = NominalStats::from_series(&nominal)?;
            let dir = self.alarm_dir(&cell);
            write_json(&dir.join("stats.json"), &stats)?;
            for &kind in &self.cfg.anomalies {
                let series = self.ensemble_scores(&cell, kind.name())?;
                let alarms: Vec<(usize, Vec<usize>)> = series
                    .iter()
                    .map(|s| (s.traj_id, detection::cusum_alarms(s, &self.cfg.cusum, &stats)))
                    .collect();
                detection::write_alarms(&dir.join(format!("{}.csv", kind.name())), &alarms)?;
            }
        }
        Ok(())
    }

    pub fn eval(&self) -> Result<Vec<MetricRow>> {
        self.require_all_models()?;
        let mut rows = Vec::new();
        for cell in self.cells() {
            let dir = self.alarm_dir(&cell);
            for &kind in &self.cfg.anomalies {
                let manifest = dataset::read_manifest(&self.dataset_dir(cell.env, Split::AnomalousTest, Some(kind)))?;
                let series = self.ensemble_scores(&cell, kind.name())?;
                let alarm_path = dir.join(format!("{}.csv", kind.name()));
                if !alarm_path.exists() {
                    return Err(Error::MissingArtifact(alarm_path));
                }
                let alarms = detection::read_alarms(&alarm_path)?;
                let evals = series
                    .iter()
                    .map(|s| {
                        let inject = manifest
                            .trajectories
                            .iter()
                            .find(|r| r.id == s.traj_id)
                            .and_then(|r| r.inject_step)
                            .ok_or_else(|| Error::CorruptRecord {
                                path: alarm_path.clone(),
                                reason: format!("trajectory {} has no injection step", s.traj_id),
                            })?;
                        let a = alarms.get(&s.traj_id).map(Vec::as_slice).unwrap_or(&[]);
                        evaluation::evaluate_series(s, inject, a)
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.push(MetricRow {
                    cell,
                    anomaly: kind,
                    summary: evaluation::aggregate(&evals)?,
                });
            }
        }
        write_json(&self.report_dir().join("metrics.json"), &rows)?;
        Ok(rows)
    }

    pub fn load_metrics(&self) -> Result<Vec<MetricRow>> {
        let path = self.report_dir().join("metrics.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        checkpoint::load(&path)
    }

    pub fn report(&self) -> Result<()> {
        let rows = self.load_metrics()?;
        let dir = self.report_dir();
        evaluation::write_report(&dir.join("metrics.csv"), &rows)?;
        evaluation::write_groups(&dir.join("groups.csv"), &evaluation::group_averages(&rows))?;
        evaluation::write_long(&dir.join("long.csv"), &rows)?;
        info!("wrote {} report rows to {}", rows.len(), dir.display());
        Ok(())
    }
}

fn save_dataset(
    split: Split,
    kind: Option<AnomalyKind>,
    horizon: usize,
    seed: u64,
    stats: &FeatureStats,
    trajs: Vec<dataset::Trajectory>,
    dir: &Path,
) -> Result<()> {
    let data = Dataset::new(split, kind, horizon, seed, stats, trajs)?;
    dataset::save(&data, dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
