use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Tensor2};
use crate::rng::{mix_label, stream, Rng};

use super::loss::{quantile_huber, quantile_huber_grad};
use super::net::{FeatureNet, HeadCache, TrunkCache, WIDTH};
use super::{Forecaster, RolloutConfig};

/// Neural predictor families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// Recurrent implicit quantile network.
    Riqn,
    /// Recurrent point predictor trained with squared error.
    Npn,
    /// Quantile network over a window of recent observations, no memory.
    Nriqn,
}

impl NetKind {
    pub fn recurrent(self) -> bool {
        !matches!(self, NetKind::Nriqn)
    }

    pub fn quantile(self) -> bool {
        !matches!(self, NetKind::Npn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minibatches per epoch; `None` means one pass over the training set.
    pub batches_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub tbptt: usize,
    pub n_tau: usize,
    pub kappa: f64,
    pub lr: f64,
    pub teacher_floor: f64,
    pub grad_clip: f64,
    /// History window for non-recurrent networks.
    pub window: usize,
    /// Cap on validation trajectories used for the per-epoch loss.
    pub max_val: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batches_per_epoch: None,
            batch_size: 16,
            tbptt: 50,
            n_tau: 8,
            kappa: 1.0,
            lr: 1e-3,
            teacher_floor: 0.5,
            grad_clip: 5.0,
            window: 4,
            max_val: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Teacher-forcing probability for an epoch, decaying linearly from 1 to
    /// the floor over the run.
    pub fn teacher_prob(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return 1.0;
        }
        let frac = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        1.0 - (1.0 - self.teacher_floor) * frac
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("train.{field}"),
                reason: reason.into(),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.tbptt == 0 {
            return bad("tbptt", "must be at least 1");
        }
        if self.n_tau == 0 {
            return bad("n_tau", "must be at least 1");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa", "must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.teacher_floor) {
            return bad("teacher_floor", "must lie in [0, 1]");
        }
        if self.window == 0 {
            return bad("window", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_val_loss: f64,
    pub val_losses: Vec<f64>,
    pub train_losses: Vec<f64>,
}

/// One network per observation feature, all reading the full observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    pub kind: NetKind,
    pub dim: usize,
    pub window: usize,
    pub nets: Vec<FeatureNet>,
    pub history: TrainHistory,
}

/// Rolling input buffer of the last `window` fed observations per row.
struct Windows {
    data: Tensor2,
    dim: usize,
}

impl Windows {
    fn new(rows: usize, window: usize, dim: usize) -> Self {
        Self {
            data: Tensor2::zeros(rows, window * dim),
            dim,
        }
    }

    /// Starts every row from edge padding with its first observation.
    fn fill(&mut self, x: &Tensor2) {
        for r in 0..x.rows() {
            let xr = x.row(r);
            for chunk in self.data.row_mut(r).chunks_mut(self.dim) {
                chunk.copy_from_slice(xr);
            }
        }
    }

    fn push(&mut self, x: &Tensor2) {
        let d = self.dim;
        for r in 0..x.rows() {
            let row = self.data.row_mut(r);
            row.copy_within(d.., 0);
            let n = row.len();
            row[n - d..].copy_from_slice(x.row(r));
        }
    }

    fn from_history(obs: &Tensor2, lasts: &[usize], reps: usize, window: usize) -> Self {
        let d = obs.cols();
        let mut w = Self::new(lasts.len() * reps, window, d);
        for (i, &last) in lasts.iter().enumerate() {
            for rep in 0..reps {
                let row = w.data.row_mut(i * reps + rep);
                for slot in 0..window {
                    let t = (last + slot + 1).saturating_sub(window);
                    row[slot * d..(slot + 1) * d].copy_from_slice(obs.row(t));
                }
            }
        }
        w
    }
}

fn uniform_taus(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

struct StepRecord {
    trunk: TrunkCache,
    head: HeadCache,
    dy: Vec<f64>,
}

impl NeuralModel {
    pub fn new(kind: NetKind, dim: usize, window: usize, rng: &mut Rng) -> Self {
        let window = if kind.recurrent() { 1 } else { window.max(1) };
        let nets = (0..dim)
            .map(|_| FeatureNet::new(window * dim, kind.recurrent(), kind.quantile(), rng))
            .collect();
        Self {
            kind,
            dim,
            window,
            nets,
            history: TrainHistory::default(),
        }
    }

    fn per_row_taus(&self, k: usize) -> usize {
        if self.kind.quantile() {
            k
        } else {
            1
        }
    }

    fn loss_and_grad(&self, y: f64, target: f64, tau: f64, kappa: f64) -> (f64, f64) {
        if self.kind.quantile() {
            (quantile_huber(y, target, tau, kappa), quantile_huber_grad(y, target, tau, kappa))
        } else {
            let e = y - target;
            (e * e, 2.0 * e)
        }
    }

    /// Teacher-forced mean loss over whole trajectories with quantile levels
    /// drawn from a fixed stream.
    pub fn validation_loss(&self, val: &[&Tensor2], cfg: &TrainConfig) -> Result<f64> {
        if val.is_empty() {
            return Err(Error::EmptyDataset("validation set".into()));
        }
        let val = &val[..val.len().min(cfg.max_val.max(1))];
        let mut rng = stream(mix_label(cfg.seed, "validation-taus"));
        let rows = val.len();
        let tmax = val.iter().map(|o| o.rows()).max().unwrap_or(0);
        let k = self.per_row_taus(cfg.n_tau);
        let mut hidden: Vec<Option<Tensor2>> = vec![None; self.dim];
        let mut windows = Windows::new(rows, self.window, self.dim);
        let (mut total, mut count) = (0.0, 0usize);
        for t in 0..tmax.saturating_sub(1) {
            let x = gather_rows(val, t);
            let input = if self.kind.recurrent() {
                &x
            } else {
                if t == 0 {
                    windows.fill(&x);
                } else {
                    windows.push(&x);
                }
                &windows.data
            };
            for (j, net) in self.nets.iter().enumerate() {
                let out = net.trunk(input, hidden[j].as_ref())?;
                let taus = uniform_taus(&mut rng, rows * k);
                let y = net.head(&out.s, &taus)?;
                for (b, obs) in val.iter().enumerate() {
                    if t + 1 < obs.rows() {
                        let target = obs.get(t + 1, j);
                        for q in 0..k {
                            total += self.loss_and_grad(y[b * k + q], target, taus[b * k + q], cfg.kappa).0;
                            count += 1;
                        }
                    }
                }
                hidden[j] = out.h;
            }
        }
        if count == 0 {
            return Err(Error::EmptyDataset("validation trajectories shorter than two steps".into()));
        }
        let loss = total / count as f64;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining(format!("validation loss {loss}")));
        }
        Ok(loss)
    }

    /// One minibatch of truncated backpropagation with scheduled sampling.
    /// Returns the mean training loss over all feature networks.
    fn train_batch(
        &mut self,
        batch: &[&Tensor2],
        p_teacher: f64,
        cfg: &TrainConfig,
        optimizers: &mut [Adam],
        rng: &mut Rng,
    ) -> Result<f64> {
        let rows = batch.len();
        let d = self.dim;
        let tmax = batch.iter().map(|o| o.rows()).max().unwrap_or(0);
        let k = self.per_row_taus(cfg.n_tau);
        let mut hidden: Vec<Option<Tensor2>> = vec![None; d];
        let mut windows = Windows::new(rows, self.window, d);
        let mut own = Tensor2::zeros(rows, d);
        let (mut total, mut count) = (0.0, 0usize);

        let steps = tmax.saturating_sub(1);
        let mut start = 0;
        while start < steps {
            let end = (start + cfg.tbptt).min(steps);
            let mut records: Vec<Vec<StepRecord>> = (0..d).map(|_| Vec::with_capacity(end - start)).collect();
            let mut valid = 0usize;
            for t in start..end {
                let mut x = gather_rows(batch, t);
                if t > 0 {
                    for b in 0..rows {
                        if rng.random::<f64>() >= p_teacher {
                            x.row_mut(b).copy_from_slice(own.row(b));
                        }
                    }
                }
                let input = if self.kind.recurrent() {
                    x
                } else {
                    if t == 0 {
                        windows.fill(&x);
                    } else {
                        windows.push(&x);
                    }
                    windows.data.clone()
                };
                valid += batch.iter().filter(|o| t + 1 < o.rows()).count();
                for j in 0..d {
                    let net = &self.nets[j];
                    let (out, trunk) = net.trunk_cached(&input, hidden[j].as_ref())?;
                    // one set of levels per step, shared by the minibatch rows
                    let taus = uniform_taus(rng, k);
                    let (y, head) = net.head_shared_cached(&out.s, &taus)?;
                    let mut dy = vec![0.0; y.len()];
                    for (b, obs) in batch.iter().enumerate() {
                        own.set(b, j, y[b * k]);
                        if t + 1 < obs.rows() {
                            let target = obs.get(t + 1, j);
                            for q in 0..k {
                                let i = b * k + q;
                                let (l, g) = self.loss_and_grad(y[i], target, taus[q], cfg.kappa);
                                total += l;
                                count += 1;
                                dy[i] = g;
                            }
                        }
                    }
                    hidden[j] = out.h;
                    records[j].push(StepRecord { trunk, head, dy });
                }
            }
            let scale = 1.0 / (valid * k).max(1) as f64;
            for (j, recs) in records.into_iter().enumerate() {
                let net = &mut self.nets[j];
                net.zero_grad();
                let mut dh: Option<Tensor2> = None;
                for rec in recs.iter().rev() {
                    let dy: Vec<f64> = rec.dy.iter().map(|g| g * scale).collect();
                    let ds = net.head_backward(&rec.head, &dy)?;
                    dh = net.trunk_backward(&rec.trunk, &ds, dh.as_ref())?;
                }
                let mut params = net.params_mut();
                let norm = clip_grad_norm(&mut params, cfg.grad_clip);
                if !norm.is_finite() {
                    return Err(Error::DivergedTraining(format!("gradient norm {norm}")));
                }
                optimizers[j].step(&mut params)?;
            }
            start = end;
        }
        if count == 0 {
            return Ok(0.0);
        }
        Ok(total / count as f64)
    }

    /// Trains a fresh model on normalized trajectories and keeps the
    /// parameters of the epoch with the lowest validation loss.
    pub fn train(kind: NetKind, train: &[&Tensor2], val: &[&Tensor2], cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = match train.first() {
            Some(o) => o.cols(),
            None => return Err(Error::EmptyDataset("training set".into())),
        };
        let usable: Vec<&Tensor2> = train.iter().copied().filter(|o| o.rows() >= 2).collect();
        if usable.is_empty() {
            return Err(Error::EmptyDataset("no training trajectory has two steps".into()));
        }
        let mut init_rng = stream(mix_label(cfg.seed, "init"));
        let mut model = Self::new(kind, dim, cfg.window, &mut init_rng);
        let mut rng = stream(mix_label(cfg.seed, "train"));
        let mut optimizers = vec![Adam::new(cfg.lr); dim];
        model.history.initial_val_loss = model.validation_loss(val, cfg)?;
        let per_epoch = cfg
            .batches_per_epoch
            .unwrap_or_else(|| usable.len().div_ceil(cfg.batch_size));
        let mut order: Vec<usize> = (0..usable.len()).collect();
        let mut cursor = usable.len();
        let mut best = (model.history.initial_val_loss, model.nets.clone());
        for epoch in 0..cfg.epochs {
            let p = cfg.teacher_prob(epoch);
            let mut epoch_loss = 0.0;
            for _ in 0..per_epoch {
                let mut batch = Vec::with_capacity(cfg.batch_size);
                while batch.len() < cfg.batch_size.min(usable.len()) {
                    if cursor == usable.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    batch.push(usable[order[cursor]]);
                    cursor += 1;
                }
                epoch_loss += model.train_batch(&batch, p, cfg, &mut optimizers, &mut rng)?;
            }
            let val_loss = model.validation_loss(val, cfg)?;
            log::debug!("{kind:?} epoch {epoch}: train {:.5} val {val_loss:.5}", epoch_loss / per_epoch.max(1) as f64);
            model.history.train_losses.push(epoch_loss / per_epoch.max(1) as f64);
            model.history.val_losses.push(val_loss);
            if val_loss < best.0 {
                best = (val_loss, model.nets.clone());
            }
        }
        model.nets = best.1;
        Ok(model)
    }

    /// Predicted values of feature `j` at the given quantile levels, one per
    /// level, after consuming `history`.
    pub fn quantiles(&self, history: &Tensor2, feature: usize, taus: &[f64]) -> Result<Vec<f64>> {
        if history.rows() == 0 {
            return Err(Error::HistoryTooShort { needed: 1, got: 0 });
        }
        let last = history.rows() - 1;
        let state = self.start_states(history, &[last], 1)?;
        self.nets[feature].head(&state[feature].0, taus)
    }

    /// Trunk states (and hidden states) after consuming `obs[..=last]` for
    /// each `last`, each replicated `reps` times.
    fn start_states(&self, obs: &Tensor2, lasts: &[usize], reps: usize) -> Result<Vec<(Tensor2, Option<Tensor2>)>> {
        let rows = lasts.len() * reps;
        if !self.kind.recurrent() {
            let w = Windows::from_history(obs, lasts, reps, self.window);
            return self
                .nets
                .iter()
                .map(|net| net.trunk(&w.data, None).map(|o| (o.s, None)))
                .collect();
        }
        let max_last = lasts.iter().copied().max().unwrap_or(0);
        let mut out = Vec::with_capacity(self.dim);
        for net in &self.nets {
            let mut s_all = Tensor2::zeros(max_last + 1, WIDTH);
            let mut h_all = Tensor2::zeros(max_last + 1, WIDTH);
            let mut h: Option<Tensor2> = None;
            for t in 0..=max_last {
                let o = net.trunk(&obs.slice_rows(t, t + 1), h.as_ref())?;
                s_all.row_mut(t).copy_from_slice(o.s.row(0));
                let g = o.h.expect("recurrent trunk emits a hidden state");
                h_all.row_mut(t).copy_from_slice(g.row(0));
                h = Some(g);
            }
            let mut s = Tensor2::zeros(rows, WIDTH);
            let mut hh = Tensor2::zeros(rows, WIDTH);
            for (i, &last) in lasts.iter().enumerate() {
                for rep in 0..reps {
                    s.row_mut(i * reps + rep).copy_from_slice(s_all.row(last));
                    hh.row_mut(i * reps + rep).copy_from_slice(h_all.row(last));
                }
            }
            out.push((s, Some(hh)));
        }
        Ok(out)
    }
}

fn gather_rows(batch: &[&Tensor2], t: usize) -> Tensor2 {
    let d = batch[0].cols();
    let mut x = Tensor2::zeros(batch.len(), d);
    for (b, obs) in batch.iter().enumerate() {
        let tt = t.min(obs.rows() - 1);
        x.row_mut(b).copy_from_slice(obs.row(tt));
    }
    x
}

impl Forecaster for NeuralModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn is_stochastic(&self) -> bool {
        self.kind.quantile()
    }

    fn rollout_from(&self, obs: &Tensor2, lasts: &[usize], cfg: &RolloutConfig, rng: &mut Rng) -> Result<Vec<Tensor2>> {
        cfg.validate()?;
        super::check_history(obs, lasts, self.dim)?;
        if lasts.is_empty() {
            return Ok(Vec::new());
        }
        let m = if self.is_stochastic() { cfg.samples } else { 1 };
        let mean_sampling = cfg.mean_sampling && self.is_stochastic();
        let (reps, k) = if mean_sampling { (1, m) } else { (m, 1) };
        let rows = lasts.len() * reps;
        let d = self.dim;
        let mut states = self.start_states(obs, lasts, reps)?;
        let mut windows = (!self.kind.recurrent()).then(|| Windows::from_history(obs, lasts, reps, self.window));
        for step in 1..=cfg.delta {
            let mut preds = Vec::with_capacity(d);
            for (j, net) in self.nets.iter().enumerate() {
                let taus = if self.is_stochastic() {
                    uniform_taus(rng, rows * k)
                } else {
                    Vec::new()
                };
                preds.push(net.head(&states[j].0, &taus)?);
            }
            if step == cfg.delta {
                let mut out = Vec::with_capacity(lasts.len());
                for i in 0..lasts.len() {
                    let mut samples = Tensor2::zeros(m, d);
                    for s in 0..m {
                        for j in 0..d {
                            let idx = if mean_sampling { i * k + s } else { i * m + s };
                            samples.set(s, j, preds[j][idx]);
                        }
                    }
                    samples.ensure_finite("rollout samples")?;
                    out.push(samples);
                }
                return Ok(out);
            }
            let mut x = Tensor2::zeros(rows, d);
            for r in 0..rows {
                for j in 0..d {
                    let v = preds[j][r * k..(r + 1) * k].iter().sum::<f64>() / k as f64;
                    x.set(r, j, v);
                }
            }
            match &mut windows {
                Some(w) => {
                    w.push(&x);
                    for (j, net) in self.nets.iter().enumerate() {
                        states[j].0 = net.trunk(&w.data, None)?.s;
                    }
                }
                None => {
                    for (j, net) in self.nets.iter().enumerate() {
                        let o = net.trunk(&x, states[j].1.as_ref())?;
                        states[j] = (o.s, o.h);
                    }
                }
            }
        }
        unreachable!("delta is at least one")
    }
}
