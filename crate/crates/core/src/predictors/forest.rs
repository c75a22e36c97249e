use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::rng::{mix, mix_label, stream, Rng};

use super::{check_history, Forecaster, RolloutConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub window: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(p))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    /// Cap on (window, next value) pairs drawn per tree.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 12,
            min_leaf: 5,
            window: 4,
            max_features: None,
            bootstrap: true,
            max_samples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// CART regression tree stored as a flat node list rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Fits on the rows of `x` listed in `idx` (repeats allowed).
    pub fn fit(x: &Tensor2, y: &[f64], idx: Vec<usize>, cfg: &ForestConfig, rng: &mut Rng) -> Self {
        let p = x.cols();
        let mtry = cfg
            .max_features
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1));
        let mut builder = Builder {
            x,
            y,
            cfg,
            mtry,
            nodes: Vec::new(),
            scratch: Vec::new(),
        };
        let mut idx = idx;
        builder.build(&mut idx, 0, rng);
        Self { nodes: builder.nodes }
    }
}

struct Builder<'a> {
    x: &'a Tensor2,
    y: &'a [f64],
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64)>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let value = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len().max(1) as f64;
        self.nodes.push(Node::Leaf { value });
        self.nodes.len() - 1
    }

    /// Best `(feature, threshold, gain)` among sampled features; `None` when
    /// no split satisfies the leaf-size rule with positive gain.
    fn best_split(&mut self, idx: &[usize], rng: &mut Rng) -> Option<(usize, f64)> {
        let n = idx.len();
        let min_leaf = self.cfg.min_leaf.max(1);
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for feature in sample(rng, self.x.cols(), self.mtry) {
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| (self.x.get(i, feature), self.y[i])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for split in 1..n {
                left += self.scratch[split - 1].1;
                if split < min_leaf || n - split < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.scratch[split - 1].0, self.scratch[split].0);
                if lo == hi {
                    continue;
                }
                let right = total - left;
                // SSE reduction up to the constant Σy²
                let gain = left * left / split as f64 + right * right / (n - split) as f64 - parent;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                    best = Some((feature, 0.5 * (lo + hi), gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut Rng) -> usize {
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_leaf.max(1) {
            return self.leaf(idx);
        }
        let Some((feature, threshold)) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        let mut mid = 0;
        for i in 0..idx.len() {
            if self.x.get(idx[i], feature) <= threshold {
                idx.swap(i, mid);
                mid += 1;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Mean of bootstrapped regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn fit(x: &Tensor2, y: &[f64], cfg: &ForestConfig, seed: u64) -> Result<Self> {
        if x.rows() == 0 || x.rows() != y.len() {
            return Err(Error::EmptyDataset(format!("forest with {} rows, {} targets", x.rows(), y.len())));
        }
        if cfg.n_trees == 0 {
            return Err(Error::Config {
                field: "forest.n_trees".into(),
                reason: "must be at least 1".into(),
            });
        }
        let n = x.rows();
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream(mix(seed, t as u64));
                let size = n.min(cfg.max_samples.max(1));
                let idx: Vec<usize> = if cfg.bootstrap {
                    (0..size).map(|_| rng.random_range(0..n)).collect()
                } else if size < n {
                    sample(&mut rng, n, size).into_vec()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(x, y, idx, cfg, &mut rng)
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// One forest per observation feature over a flattened window of recent
/// observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub dim: usize,
    pub window: usize,
    pub forests: Vec<RandomForest>,
}

/// Flattened edge-padded window ending at `last`.
fn window_row(obs: &Tensor2, last: usize, window: usize, out: &mut [f64]) {
    let d = obs.cols();
    for slot in 0..window {
        let t = (last + slot + 1).saturating_sub(window);
        out[slot * d..(slot + 1) * d].copy_from_slice(obs.row(t));
    }
}

impl ForestModel {
    pub fn train(train: &[&Tensor2], cfg: &ForestConfig) -> Result<Self> {
        let dim = train
            .first()
            .map(|o| o.cols())
            .ok_or_else(|| Error::EmptyDataset("training set".into()))?;
        let window = cfg.window.max(1);
        let pairs: usize = train.iter().map(|o| o.rows().saturating_sub(1)).sum();
        if pairs == 0 {
            return Err(Error::EmptyDataset("no training trajectory has two steps".into()));
        }
        let mut x = Tensor2::zeros(pairs, window * dim);
        let mut ys = vec![Vec::with_capacity(pairs); dim];
        let mut r = 0;
        for obs in train {
            for t in 0..obs.rows().saturating_sub(1) {
                window_row(obs, t, window, x.row_mut(r));
                for (j, y) in ys.iter_mut().enumerate() {
                    y.push(obs.get(t + 1, j));
                }
                r += 1;
            }
        }
        let base = mix_label(cfg.seed, "forest");
        let forests = ys
            .iter()
            .enumerate()
            .map(|(j, y)| RandomForest::fit(&x, y, cfg, mix(base, j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, window, forests })
    }
}

impl Forecaster for ForestModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn rollout_from(&self, obs: &Tensor2, lasts: &[usize], cfg: &RolloutConfig, _rng: &mut Rng) -> Result<Vec<Tensor2>> {
        cfg.validate()?;
        check_history(obs, lasts, self.dim)?;
        let d = self.dim;
        let wlen = self.window * d;
        lasts
            .iter()
            .map(|&last| {
                let mut w = vec![0.0; wlen];
                window_row(obs, last, self.window, &mut w);
                let mut next = vec![0.0; d];
                for step in 1..=cfg.delta {
                    for (j, f) in self.forests.iter().enumerate() {
                        next[j] = f.predict(&w);
                    }
                    if step < cfg.delta {
                        w.copy_within(d.., 0);
                        w[wlen - d..].copy_from_slice(&next);
                    }
                }
                Tensor2::from_vec(1, d, next)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, seed: u64) -> (Tensor2, Vec<f64>) {
        let mut rng = stream(seed);
        let x = Tensor2::from_vec(n, 3, (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..n).map(|i| if x.get(i, 1) > 0.2 { 2.0 } else { -1.0 }).collect();
        (x, y)
    }

    #[test]
    fn single_tree_without_bootstrap_equals_forest() {
        let (x, y) = synthetic(300, 1);
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let forest = RandomForest::fit(&x, &y, &cfg, 9).unwrap();
        let mut rng = stream(mix(9, 0));
        let tree = RegressionTree::fit(&x, &y, (0..300).collect(), &cfg, &mut rng);
        assert_eq!(forest.trees[0], tree);
        for i in 0..300 {
            assert_eq!(forest.predict(x.row(i)), tree.predict(x.row(i)));
        }
    }

    #[test]
    fn recovers_a_step_function() {
        let (x, y) = synthetic(500, 2);
        let cfg = ForestConfig {
            n_trees: 10,
            max_features: Some(3),
            ..ForestConfig::default()
        };
        let forest = RandomForest::fit(&x, &y, &cfg, 3).unwrap();
        assert!((forest.predict(&[0.0, 0.9, 0.0]) - 2.0).abs() < 0.1);
        assert!((forest.predict(&[0.0, -0.9, 0.0]) + 1.0).abs() < 0.1);
    }

    #[test]
    fn respects_depth_and_leaf_size() {
        let (x, y) = synthetic(400, 4);
        let cfg = ForestConfig {
            max_depth: 3,
            min_leaf: 7,
            max_features: Some(3),
            ..ForestConfig::default()
        };
        let idx: Vec<usize> = (0..400).collect();
        let tree = RegressionTree::fit(&x, &y, idx, &cfg, &mut stream(5));
        assert!(tree.depth() <= 3);
        let mut counts = vec![0usize; tree.nodes.len()];
        for i in 0..400 {
            let mut n = 0;
            loop {
                match &tree.nodes[n] {
                    Node::Leaf { .. } => break,
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => n = if x.get(i, *feature) <= *threshold { *left } else { *right },
                }
            }
            counts[n] += 1;
        }
        for (n, c) in counts.iter().enumerate() {
            if matches!(tree.nodes[n], Node::Leaf { .. }) {
                assert!(*c >= 7, "leaf {n} holds {c}");
            }
        }
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let (x, _) = synthetic(100, 6);
        let y = vec![0.5; 100];
        let tree = RegressionTree::fit(&x, &y, (0..100).collect(), &ForestConfig::default(), &mut stream(1));
        assert_eq!(tree.nodes, vec![Node::Leaf { value: 0.5 }]);
    }

    #[test]
    fn learns_copy_of_last_value() {
        let mut rng = stream(8);
        let mut draw = |n: usize| {
            let x = Tensor2::from_vec(n, 1, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let y = x.data().to_vec();
            (x, y)
        };
        let (x, y) = draw(2000);
        let (xt, yt) = draw(500);
        let cfg = ForestConfig {
            window: 1,
            n_trees: 20,
            ..ForestConfig::default()
        };
        let forest = RandomForest::fit(&x, &y, &cfg, 4).unwrap();
        let mse = (0..500).map(|i| (forest.predict(xt.row(i)) - yt[i]).powi(2)).sum::<f64>() / 500.0;
        assert!(mse < 0.01, "mse {mse}");
    }

    #[test]
    fn forest_rollout_is_deterministic() {
        let obs = Tensor2::from_vec(30, 2, (0..60).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
        let model = ForestModel::train(&[&obs], &ForestConfig { n_trees: 3, ..ForestConfig::default() }).unwrap();
        let cfg = RolloutConfig { delta: 3, samples: 8, mean_sampling: false };
        let a = model.rollout_from(&obs, &[5, 10], &cfg, &mut stream(1)).unwrap();
        let b = model.rollout_from(&obs, &[5, 10], &cfg, &mut stream(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].shape(), (1, 2));
    }
}
