//! Ensemble prediction-error scores and CUSUM alarms.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::predictors::{Forecaster, RolloutConfig};
use crate::rng::{mix, stream};

/// Homogeneous group of trained predictors sharing normalization.
#[derive(Debug, Clone)]
pub struct Ensemble<F> {
    members: Vec<F>,
}

impl<F: Forecaster> Ensemble<F> {
    pub fn new(members: Vec<F>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        };
        let d = first.dim();
        if members.iter().any(|m| m.dim() != d) {
            return Err(Error::ShapeMismatch("ensemble members disagree on observation dimension".into()));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[F] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }
}

/// Scores `A_t` for `t = delta, delta + 1, ..., T − 1` (0-based rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub traj_id: usize,
    pub delta: usize,
    pub scores: Vec<f64>,
    /// Samples averaged per score (`M · e`).
    pub samples_per_step: usize,
}

impl ScoreSeries {
    /// Observation row index of `scores[i]`.
    pub fn time(&self, i: usize) -> usize {
        self.delta + i
    }

    pub fn times(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.scores.len()).map(|i| self.time(i))
    }
}

/// Mean L1 distance between sample rows and the truth.
pub fn mean_l1(samples: &[&Tensor2], truth: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in samples {
        for row in s.iter_rows() {
            total += row.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>();
            n += 1;
        }
    }
    total / n.max(1) as f64
}

/// Per-step mean L1 error of one member's samples. Member `k` draws from the
/// stream `mix(mix(seed, traj_id), k)`, so results do not depend on
/// scheduling or on which other members are present.
pub fn score_member<F: Forecaster>(
    member: &F,
    k: usize,
    obs: &Tensor2,
    traj_id: usize,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<ScoreSeries> {
    if obs.rows() <= cfg.delta {
        return Err(Error::HistoryTooShort {
            needed: cfg.delta + 1,
            got: obs.rows(),
        });
    }
    let mut rng = stream(mix(mix(seed, traj_id as u64), k as u64));
    let samples = member.rollout_series(obs, cfg, &mut rng)?;
    let scores = samples
        .iter()
        .enumerate()
        .map(|(i, s)| mean_l1(&[s], obs.row(cfg.delta + i)))
        .collect();
    Ok(ScoreSeries {
        traj_id,
        delta: cfg.delta,
        scores,
        samples_per_step: samples[0].rows(),
    })
}

/// Averages member series of the same trajectory. Every member contributes
/// the same number of samples, so the result is the mean over all `M · e`.
pub fn combine_members(members: &[ScoreSeries]) -> Result<ScoreSeries> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("no member scores to combine".into()))?;
    if members
        .iter()
        .any(|m| m.traj_id != first.traj_id || m.delta != first.delta || m.scores.len() != first.scores.len())
    {
        return Err(Error::ShapeMismatch(format!(
            "member scores for trajectory {} do not align",
            first.traj_id
        )));
    }
    let e = members.len() as f64;
    let scores = (0..first.scores.len())
        .map(|i| members.iter().map(|m| m.scores[i]).sum::<f64>() / e)
        .collect();
    Ok(ScoreSeries {
        traj_id: first.traj_id,
        delta: first.delta,
        scores,
        samples_per_step: members.iter().map(|m| m.samples_per_step).sum(),
    })
}

/// Scores one normalized trajectory with every ensemble member.
pub fn score_trajectory<F: Forecaster>(
    ensemble: &Ensemble<F>,
    obs: &Tensor2,
    traj_id: usize,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<ScoreSeries> {
    let per_member = ensemble
        .members
        .iter()
        .enumerate()
        .map(|(k, m)| score_member(m, k, obs, traj_id, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    combine_members(&per_member)
}

/// Scores many trajectories in parallel; output order follows the input.
pub fn score_all<F: Forecaster>(
    ensemble: &Ensemble<F>,
    trajectories: &[(usize, &Tensor2)],
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<Vec<ScoreSeries>> {
    trajectories
        .par_iter()
        .map(|(id, obs)| score_trajectory(ensemble, obs, *id, cfg, seed))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CusumConfig {
    pub threshold: f64,
    pub drift: f64,
    /// Standardize scores by nominal statistics before accumulating.
    pub standardize: bool,
}

impl Default for CusumConfig {
    fn default() -> Self {
        Self {
            threshold: 0.01,
            drift: 0.0018,
            standardize: true,
        }
    }
}

impl CusumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::Config {
                field: "cusum.threshold".into(),
                reason: "must be positive".into(),
            });
        }
        if !(self.drift >= 0.0) {
            return Err(Error::Config {
                field: "cusum.drift".into(),
                reason: "must be non-negative".into(),
            });
        }
        Ok(())
    }
}

/// Reference level of nominal scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalStats {
    pub mean: f64,
    pub std: f64,
}

pub const STD_FLOOR: f64 = 1e-8;

impl NominalStats {
    /// Pooled mean and population standard deviation of every score.
    pub fn from_series(series: &[ScoreSeries]) -> Result<Self> {
        let values: Vec<f64> = series.iter().flat_map(|s| s.scores.iter().copied()).collect();
        if values.is_empty() {
            return Err(Error::EmptyDataset("no nominal scores".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        })
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Scores the nominal validation trajectories and pools their statistics.
pub fn nominal_score_stats<F: Forecaster>(
    ensemble: &Ensemble<F>,
    val: &[(usize, &Tensor2)],
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<NominalStats> {
    if val.is_empty() {
        return Err(Error::EmptyDataset("nominal validation set".into()));
    }
    NominalStats::from_series(&score_all(ensemble, val, cfg, seed)?)
}

/// One-sided CUSUM with reset: `g = max(0, g + x − drift)`, alarm and reset
/// whenever `g > threshold`. Returns alarm indices into `values`.
pub fn cusum(values: &[f64], threshold: f64, drift: f64) -> Vec<usize> {
    let mut g: f64 = 0.0;
    let mut alarms = Vec::new();
    for (i, &x) in values.iter().enumerate() {
        g = (g + x - drift).max(0.0);
        if g > threshold {
            alarms.push(i);
            g = 0.0;
        }
    }
    alarms
}

/// Alarm times (observation row indices) for a score series.
pub fn cusum_alarms(series: &ScoreSeries, cfg: &CusumConfig, stats: &NominalStats) -> Vec<usize> {
    let values: Vec<f64> = if cfg.standardize {
        series.scores.iter().map(|&v| stats.standardize(v)).collect()
    } else {
        series.scores.clone()
    };
    cusum(&values, cfg.threshold, cfg.drift)
        .into_iter()
        .map(|i| series.time(i))
        .collect()
}

fn write_text(path: &Path, text: String) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `traj_id,t,score` rows.
pub fn write_scores(path: &Path, series: &[ScoreSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["traj_id", "t", "score"]).map_err(csv_err)?;
    for s in series {
        for (i, v) in s.scores.iter().enumerate() {
            w.write_record([s.traj_id.to_string(), s.time(i).to_string(), format!("{v:.16e}")])
                .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_text(path, String::from_utf8(bytes).expect("ascii"))
}

/// Reads a file written by [`write_scores`]; series keep file order.
pub fn read_scores(path: &Path, delta: usize, samples_per_step: usize) -> Result<Vec<ScoreSeries>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut out: Vec<ScoreSeries> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::CorruptRecord {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| Error::CorruptRecord {
            path: path.to_path_buf(),
            reason: format!("bad {what} in {rec:?}"),
        };
        let id: usize = field(0).parse().map_err(|_| bad("traj_id"))?;
        let t: usize = field(1).parse().map_err(|_| bad("t"))?;
        let v: f64 = field(2).parse().map_err(|_| bad("score"))?;
        match out.last_mut() {
            Some(s) if s.traj_id == id => s.scores.push(v),
            _ => out.push(ScoreSeries {
                traj_id: id,
                delta,
                scores: vec![v],
                samples_per_step,
            }),
        }
        let s = out.last().expect("pushed");
        if s.time(s.scores.len() - 1) != t {
            return Err(bad("t sequence"));
        }
    }
    Ok(out)
}

/// `traj_id,alarm_t` rows.
pub fn write_alarms(path: &Path, alarms: &[(usize, Vec<usize>)]) -> Result<()> {
    let mut text = String::from("traj_id,alarm_t\n");
    for (id, ts) in alarms {
        for t in ts {
            text.push_str(&format!("{id},{t}\n"));
        }
    }
    write_text(path, text)
}

/// Reads a file written by [`write_alarms`], keyed by trajectory id.
pub fn read_alarms(path: &Path) -> Result<BTreeMap<usize, Vec<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)));
        let (id, t) = parsed.ok_or_else(|| Error::CorruptRecord {
            path: path.to_path_buf(),
            reason: format!("bad alarm row `{line}`"),
        })?;
        out.entry(id).or_default().push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    /// Returns fixed samples regardless of history.
    struct Fixed {
        rows: Vec<Vec<f64>>,
    }

    impl Forecaster for Fixed {
        fn dim(&self) -> usize {
            self.rows[0].len()
        }

        fn is_stochastic(&self) -> bool {
            false
        }

        fn rollout_from(&self, _: &Tensor2, lasts: &[usize], _: &RolloutConfig, _: &mut Rng) -> Result<Vec<Tensor2>> {
            Ok(lasts.iter().map(|_| Tensor2::from_rows(&self.rows).unwrap()).collect())
        }
    }

    #[test]
    fn l1_reference_values() {
        let truth = [1.0, 2.0];
        let exact = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(mean_l1(&[&exact], &truth), 0.0);
        let two = Tensor2::from_rows(&[vec![0.0, 0.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(mean_l1(&[&two], &truth), 3.0);
    }

    #[test]
    fn duplicate_members_match_single_member() {
        let obs = Tensor2::from_rows(&[vec![0.0, 1.0], vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let one = Ensemble::new(vec![Fixed { rows: vec![vec![0.5, 0.5]] }]).unwrap();
        let two = Ensemble::new(vec![Fixed { rows: vec![vec![0.5, 0.5]] }, Fixed { rows: vec![vec![0.5, 0.5]] }]).unwrap();
        let cfg = RolloutConfig::default();
        let a = score_trajectory(&one, &obs, 0, &cfg, 1).unwrap();
        let b = score_trajectory(&two, &obs, 0, &cfg, 1).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.scores, vec![2.0, 4.0]);
        assert_eq!(b.samples_per_step, 2);
    }

    #[test]
    fn short_trajectory_is_rejected() {
        let obs = Tensor2::zeros(3, 2);
        let e = Ensemble::new(vec![Fixed { rows: vec![vec![0.0, 0.0]] }]).unwrap();
        let cfg = RolloutConfig { delta: 3, ..RolloutConfig::default() };
        assert!(matches!(score_trajectory(&e, &obs, 0, &cfg, 1), Err(Error::HistoryTooShort { .. })));
    }

    #[test]
    fn cusum_hand_recursion() {
        assert!(cusum(&[0.0; 20], 0.01, 0.0018).is_empty());
        assert_eq!(cusum(&[0.0, 0.0, 5.0, 0.0], 0.01, 0.0018), vec![2]);
        assert!(cusum(&[0.0018; 1000], 0.01, 0.0018).is_empty());
        // g: 0.006, 0.012 > 0.01 -> alarm, reset, 0.006, 0.012 -> alarm
        assert_eq!(cusum(&[0.0078; 4], 0.01, 0.0018), vec![1, 3]);
    }

    #[test]
    fn constant_nominal_scores_hit_std_floor() {
        let s = ScoreSeries {
            traj_id: 0,
            delta: 1,
            scores: vec![0.7; 10],
            samples_per_step: 1,
        };
        let stats = NominalStats::from_series(&[s]).unwrap();
        assert!((stats.mean - 0.7).abs() < 1e-15);
        assert_eq!(stats.std, STD_FLOOR);
        assert!(matches!(NominalStats::from_series(&[]), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn alarms_are_reported_in_observation_time() {
        let s = ScoreSeries {
            traj_id: 3,
            delta: 10,
            scores: vec![0.0, 0.0, 5.0],
            samples_per_step: 1,
        };
        let cfg = CusumConfig {
            standardize: false,
            ..CusumConfig::default()
        };
        let stats = NominalStats { mean: 0.0, std: 1.0 };
        assert_eq!(cusum_alarms(&s, &cfg, &stats), vec![12]);
    }

    #[test]
    fn score_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let series = vec![
            ScoreSeries { traj_id: 0, delta: 2, scores: vec![0.1, 1.0 / 3.0], samples_per_step: 8 },
            ScoreSeries { traj_id: 5, delta: 2, scores: vec![2.5], samples_per_step: 8 },
        ];
        write_scores(&path, &series).unwrap();
        assert_eq!(read_scores(&path, 2, 8).unwrap(), series);
    }

    #[test]
    fn alarm_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alarms.csv");
        write_alarms(&path, &[(0, vec![]), (4, vec![12, 30])]).unwrap();
        let back = read_alarms(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[&4], vec![12, 30]);
    }

    #[test]
    fn combined_members_average_scores() {
        let a = ScoreSeries { traj_id: 1, delta: 1, scores: vec![1.0, 2.0], samples_per_step: 8 };
        let b = ScoreSeries { traj_id: 1, delta: 1, scores: vec![3.0, 6.0], samples_per_step: 8 };
        let c = combine_members(&[a.clone(), b]).unwrap();
        assert_eq!(c.scores, vec![2.0, 4.0]);
        assert_eq!(c.samples_per_step, 16);
        let misaligned = ScoreSeries { traj_id: 2, ..a.clone() };
        assert!(combine_members(&[a, misaligned]).is_err());
    }

    proptest! {
        #[test]
        fn raising_scores_never_delays_alarms(
            base in proptest::collection::vec(-1.0f64..1.0, 1..60),
            bumps in proptest::collection::vec(0.0f64..1.0, 60),
        ) {
            let raised: Vec<f64> = base.iter().zip(&bumps).map(|(a, b)| a + b).collect();
            let first = cusum(&base, 0.01, 0.0018).first().copied();
            let first_raised = cusum(&raised, 0.01, 0.0018).first().copied();
            if let Some(f) = first {
                prop_assert!(first_raised.is_some_and(|r| r <= f));
            }
        }

        #[test]
        fn score_is_permutation_invariant_and_scale_covariant(
            rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..10),
            truth in proptest::collection::vec(-3.0f64..3.0, 3),
            c in 0.1f64..10.0,
        ) {
            let t = Tensor2::from_rows(&rows).unwrap();
            let mut rev = rows.clone();
            rev.reverse();
            let r = Tensor2::from_rows(&rev).unwrap();
            let a = mean_l1(&[&t], &truth);
            prop_assert!((a - mean_l1(&[&r], &truth)).abs() < 1e-12 * (1.0 + a));
            let scaled: Vec<Vec<f64>> = rows
                .iter()
                .map(|row| row.iter().zip(&truth).map(|(v, y)| y + c * (v - y)).collect())
                .collect();
            let s = Tensor2::from_rows(&scaled).unwrap();
            prop_assert!((mean_l1(&[&s], &truth) - c * a).abs() < 1e-9 * (1.0 + c * a));
        }
    }
}
