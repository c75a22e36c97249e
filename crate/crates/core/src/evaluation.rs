//! AUC, detection delay and false-alarm metrics, and report tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::{AnomalyGroup, AnomalyKind};
use crate::detection::ScoreSeries;
use crate::error::{Error, Result};
use crate::predictors::ModelKind;
use crate::sim::EnvKind;

/// Probability that a random anomalous score exceeds a random nominal one,
/// ties counting one half, computed from average ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// Steps from injection to the first alarm at or after it; `None` is a miss.
    pub delay: Option<usize>,
    /// Alarms strictly before injection.
    pub false_alarm_steps: usize,
    /// Alarms at or after injection.
    pub post_alarms: usize,
}

pub fn delay_and_miss(alarms: &[usize], inject_step: usize) -> DetectionOutcome {
    let false_alarm_steps = alarms.iter().filter(|&&t| t < inject_step).count();
    let delay = alarms.iter().filter(|&&t| t >= inject_step).min().map(|t| t - inject_step);
    DetectionOutcome {
        delay,
        false_alarm_steps,
        post_alarms: alarms.len() - false_alarm_steps,
    }
}

/// Metrics of one scored test trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEval {
    pub traj_id: usize,
    /// `None` when the scored window holds only one class.
    pub auc: Option<f64>,
    pub outcome: DetectionOutcome,
    /// Scored timesteps before injection.
    pub nominal_steps: usize,
}

/// Labels each scored time `t` as anomalous iff `t ≥ inject_step`.
pub fn labels(series: &ScoreSeries, inject_step: usize) -> Vec<bool> {
    series.times().map(|t| t >= inject_step).collect()
}

pub fn evaluate_series(series: &ScoreSeries, inject_step: usize, alarms: &[usize]) -> Result<SeriesEval> {
    let labels = labels(series, inject_step);
    let auc = match auc(&series.scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(SeriesEval {
        traj_id: series.traj_id,
        auc,
        outcome: delay_and_miss(alarms, inject_step),
        nominal_steps: labels.iter().filter(|&&l| !l).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean per-series AUC over series holding both classes.
    pub auc: f64,
    /// Mean delay over detected series.
    pub delay: Option<f64>,
    /// Pooled false alarms over pooled pre-injection steps.
    pub far: f64,
    pub miss_rate: f64,
    pub count: usize,
    /// Series without a nominal or anomalous scored step (excluded from AUC).
    pub single_class: usize,
}

pub fn aggregate(evals: &[SeriesEval]) -> Result<Summary> {
    if evals.is_empty() {
        return Err(Error::EmptySet);
    }
    let aucs: Vec<f64> = evals.iter().filter_map(|e| e.auc).collect();
    if aucs.is_empty() {
        return Err(Error::SingleClass);
    }
    let delays: Vec<usize> = evals.iter().filter_map(|e| e.outcome.delay).collect();
    let false_alarms: usize = evals.iter().map(|e| e.outcome.false_alarm_steps).sum();
    let nominal: usize = evals.iter().map(|e| e.nominal_steps).sum();
    Ok(Summary {
        auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
        delay: (!delays.is_empty()).then(|| delays.iter().sum::<usize>() as f64 / delays.len() as f64),
        far: if nominal == 0 { 0.0 } else { false_alarms as f64 / nominal as f64 },
        miss_rate: (evals.len() - delays.len()) as f64 / evals.len() as f64,
        count: evals.len(),
        single_class: evals.len() - aucs.len(),
    })
}

/// One cell of an experiment sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub env: EnvKind,
    pub model: ModelKind,
    pub delta: usize,
    pub samples: usize,
    pub ensemble: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub cell: Cell,
    pub anomaly: AnomalyKind,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub cell: Cell,
    pub group: AnomalyGroup,
    pub auc: f64,
    pub delay: Option<f64>,
    pub far: f64,
    pub miss_rate: f64,
    pub kinds: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Unweighted averages over anomaly kinds within each group.
pub fn group_averages(rows: &[MetricRow]) -> Vec<GroupRow> {
    let mut groups: BTreeMap<(Cell, u8), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        let g = match r.anomaly.group() {
            AnomalyGroup::Sensor => 0,
            AnomalyGroup::Dynamics => 1,
        };
        groups.entry((r.cell, g)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((cell, g), rs)| GroupRow {
            cell,
            group: if g == 0 { AnomalyGroup::Sensor } else { AnomalyGroup::Dynamics },
            auc: mean(rs.iter().map(|r| r.summary.auc)).expect("non-empty"),
            delay: mean(rs.iter().filter_map(|r| r.summary.delay)),
            far: mean(rs.iter().map(|r| r.summary.far)).expect("non-empty"),
            miss_rate: mean(rs.iter().map(|r| r.summary.miss_rate)).expect("non-empty"),
            kinds: rs.len(),
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn cell_fields(c: &Cell) -> Vec<String> {
    vec![
        c.env.name().to_string(),
        c.model.name().to_string(),
        c.delta.to_string(),
        c.samples.to_string(),
        c.ensemble.to_string(),
    ]
}

pub const REPORT_HEADER: [&str; 12] = [
    "env", "model", "delta", "samples", "ensemble", "anomaly", "group", "auc", "delay", "far", "miss_rate", "count",
];

pub fn write_report(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let body = rows
        .iter()
        .map(|r| {
            let mut f = cell_fields(&r.cell);
            f.extend([
                r.anomaly.name().to_string(),
                r.anomaly.group().name().to_string(),
                format!("{:.6}", r.summary.auc),
                fmt_opt(r.summary.delay),
                format!("{:.6}", r.summary.far),
                format!("{:.6}", r.summary.miss_rate),
                r.summary.count.to_string(),
            ]);
            f
        })
        .collect();
    write_csv(path, &REPORT_HEADER, body)
}

pub fn write_groups(path: &Path, rows: &[GroupRow]) -> Result<()> {
    let body = rows
        .iter()
        .map(|r| {
            let mut f = cell_fields(&r.cell);
            f.extend([
                r.group.name().to_string(),
                format!("{:.6}", r.auc),
                fmt_opt(r.delay),
                format!("{:.6}", r.far),
                format!("{:.6}", r.miss_rate),
                r.kinds.to_string(),
            ]);
            f
        })
        .collect();
    write_csv(
        path,
        &["env", "model", "delta", "samples", "ensemble", "group", "auc", "delay", "far", "miss_rate", "kinds"],
        body,
    )
}

/// Long format, one metric value per line, for plotting.
pub fn write_long(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut body = Vec::new();
    for r in rows {
        for (metric, value) in [
            ("auc", Some(r.summary.auc)),
            ("delay", r.summary.delay),
            ("far", Some(r.summary.far)),
            ("miss_rate", Some(r.summary.miss_rate)),
        ] {
            if let Some(v) = value {
                let mut f = cell_fields(&r.cell);
                f.extend([r.anomaly.name().to_string(), metric.to_string(), format!("{v:.6}")]);
                body.push(f);
            }
        }
    }
    write_csv(
        path,
        &["env", "model", "delta", "samples", "ensemble", "anomaly", "metric", "value"],
        body,
    )
}
