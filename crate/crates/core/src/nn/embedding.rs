use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{Linear, Param, Tensor2};

/// Cosine embedding of a quantile level: `φ(τ) = ReLU(Σ_i cos(π i τ) w_i + b)`
/// for `i = 0..n_cos`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEmbedding {
    pub linear: Linear,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    taus: Vec<f64>,
    cosines: Tensor2,
    out: Tensor2,
}

impl QuantileEmbedding {
    pub fn new(n_cos: usize, width: usize, rng: &mut Rng) -> Self {
        Self {
            linear: Linear::new(n_cos, width, rng),
        }
    }

    pub fn n_cos(&self) -> usize {
        self.linear.inputs()
    }

    pub fn width(&self) -> usize {
        self.linear.outputs()
    }

    /// `cos(π i τ)` via the Chebyshev recurrence `c_{i+1} = 2 cos(πτ) c_i − c_{i−1}`.
    fn cosines(&self, taus: &[f64]) -> Tensor2 {
        let n = self.n_cos();
        let mut c = Tensor2::zeros(taus.len(), n);
        for (k, &tau) in taus.iter().enumerate() {
            let row = c.row_mut(k);
            let c1 = (PI * tau).cos();
            if n > 0 {
                row[0] = 1.0;
            }
            if n > 1 {
                row[1] = c1;
            }
            for i in 2..n {
                row[i] = 2.0 * c1 * row[i - 1] - row[i - 2];
            }
        }
        c
    }

    /// One embedding row per quantile level.
    pub fn forward(&self, taus: &[f64]) -> Result<Tensor2> {
        let mut out = self.linear.forward(&self.cosines(taus))?;
        out.map_inplace(|v| v.max(0.0));
        Ok(out)
    }

    pub fn forward_cached(&self, taus: &[f64]) -> Result<(Tensor2, EmbeddingCache)> {
        let cosines = self.cosines(taus);
        let mut out = self.linear.forward(&cosines)?;
        out.map_inplace(|v| v.max(0.0));
        let cache = EmbeddingCache {
            taus: taus.to_vec(),
            cosines,
            out: out.clone(),
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients.
    pub fn backward(&mut self, cache: &EmbeddingCache, dout: &Tensor2) -> Result<()> {
        let dpre = self.masked(cache, dout)?;
        self.linear.backward_params(&cache.cosines, &dpre)
    }

    fn masked(&self, cache: &EmbeddingCache, dout: &Tensor2) -> Result<Tensor2> {
        if dout.shape() != cache.out.shape() {
            return Err(Error::ShapeMismatch(format!(
                "embedding cotangent {:?}, expected {:?}",
                dout.shape(),
                cache.out.shape()
            )));
        }
        let mut dpre = dout.clone();
        dpre.data_mut()
            .iter_mut()
            .zip(cache.out.data())
            .for_each(|(g, &o)| {
                if o <= 0.0 {
                    *g = 0.0
                }
            });
        Ok(dpre)
    }

    /// Accumulates parameter gradients and returns `dL/dτ` per level.
    pub fn backward_with_tau(&mut self, cache: &EmbeddingCache, dout: &Tensor2) -> Result<Vec<f64>> {
        let dpre = self.masked(cache, dout)?;
        let dcos = self.linear.backward(&cache.cosines, &dpre)?;
        let dtau = cache
            .taus
            .iter()
            .enumerate()
            .map(|(k, &tau)| {
                dcos.row(k)
                    .iter()
                    .enumerate()
                    .map(|(i, g)| -g * PI * i as f64 * (PI * i as f64 * tau).sin())
                    .sum()
            })
            .collect();
        Ok(dtau)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        self.linear.params_mut()
    }
}
