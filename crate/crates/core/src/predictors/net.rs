use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{EmbeddingCache, GruCache, GruCell, Linear, Param, QuantileEmbedding, Tensor2};
use crate::rng::Rng;

pub const WIDTH: usize = 64;
pub const N_COS: usize = 64;

/// Output head of a per-feature network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    /// `y = FC3(ReLU(FC2(s ⊙ φ(τ))))`.
    Quantile {
        embed: QuantileEmbedding,
        fc2: Linear,
        fc3: Linear,
    },
    /// `y = FC2(s)`.
    Point { fc2: Linear },
}

/// Predicts one observation feature.
///
/// Trunk: `f = ReLU(FC1(x))`, `g = GRU(f, h)`, `s = g + f`; without a
/// recurrent cell `s = f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNet {
    pub fc1: Linear,
    pub gru: Option<GruCell>,
    pub head: Head,
}

#[derive(Debug, Clone)]
pub struct TrunkCache {
    x: Tensor2,
    f: Tensor2,
    gru: Option<GruCache>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    s: Tensor2,
    k: usize,
    /// Quantile levels shared by all rows rather than drawn per row.
    shared: bool,
    quantile: Option<QuantileCache>,
}

#[derive(Debug, Clone)]
struct QuantileCache {
    emb: EmbeddingCache,
    phi: Tensor2,
    merged: Tensor2,
    u: Tensor2,
}

pub struct TrunkOut {
    pub s: Tensor2,
    pub h: Option<Tensor2>,
}

impl FeatureNet {
    pub fn new(inputs: usize, recurrent: bool, quantile: bool, rng: &mut Rng) -> Self {
        let fc1 = Linear::new(inputs, WIDTH, rng);
        let gru = recurrent.then(|| GruCell::new(WIDTH, WIDTH, rng));
        let head = if quantile {
            Head::Quantile {
                embed: QuantileEmbedding::new(N_COS, WIDTH, rng),
                fc2: Linear::new(WIDTH, WIDTH, rng),
                fc3: Linear::new(WIDTH, 1, rng),
            }
        } else {
            Head::Point {
                fc2: Linear::new(WIDTH, 1, rng),
            }
        };
        Self { fc1, gru, head }
    }

    pub fn inputs(&self) -> usize {
        self.fc1.inputs()
    }

    pub fn is_quantile(&self) -> bool {
        matches!(self.head, Head::Quantile { .. })
    }

    pub fn trunk_cached(&self, x: &Tensor2, h: Option<&Tensor2>) -> Result<(TrunkOut, TrunkCache)> {
        let mut f = self.fc1.forward(x)?;
        f.map_inplace(|v| v.max(0.0));
        match &self.gru {
            Some(cell) => {
                let zeros;
                let h = match h {
                    Some(h) => h,
                    None => {
                        zeros = Tensor2::zeros(x.rows(), WIDTH);
                        &zeros
                    }
                };
                let (g, gc) = cell.forward_cached(&f, h)?;
                let mut s = g.clone();
                s.add_assign(&f);
                let cache = TrunkCache {
                    x: x.clone(),
                    f,
                    gru: Some(gc),
                };
                Ok((TrunkOut { s, h: Some(g) }, cache))
            }
            None => {
                let cache = TrunkCache {
                    x: x.clone(),
                    f: f.clone(),
                    gru: None,
                };
                Ok((TrunkOut { s: f, h: None }, cache))
            }
        }
    }

    /// Trunk state and next hidden state; `h = None` means a zero state.
    pub fn trunk(&self, x: &Tensor2, h: Option<&Tensor2>) -> Result<TrunkOut> {
        let mut f = self.fc1.forward(x)?;
        f.map_inplace(|v| v.max(0.0));
        match &self.gru {
            Some(cell) => {
                let g = match h {
                    Some(h) => cell.forward(&f, h)?,
                    None => cell.forward(&f, &Tensor2::zeros(x.rows(), WIDTH))?,
                };
                let mut s = g.clone();
                s.add_assign(&f);
                Ok(TrunkOut { s, h: Some(g) })
            }
            None => Ok(TrunkOut { s: f, h: None }),
        }
    }

    /// Backward through one trunk step. `ds` is the cotangent of `s` and
    /// `dh_next` that of the emitted hidden state; returns the cotangent of
    /// the incoming hidden state.
    pub fn trunk_backward(
        &mut self,
        cache: &TrunkCache,
        ds: &Tensor2,
        dh_next: Option<&Tensor2>,
    ) -> Result<Option<Tensor2>> {
        let (mut df, dh_prev) = match (&mut self.gru, &cache.gru) {
            (Some(cell), Some(gc)) => {
                let mut dg = ds.clone();
                if let Some(d) = dh_next {
                    dg.add_assign(d);
                }
                let (df_gru, dh_prev) = cell.backward(gc, &dg)?;
                let mut df = ds.clone();
                df.add_assign(&df_gru);
                (df, Some(dh_prev))
            }
            (None, None) => (ds.clone(), None),
            _ => return Err(Error::ShapeMismatch("trunk cache does not match network".into())),
        };
        df.data_mut()
            .iter_mut()
            .zip(cache.f.data())
            .for_each(|(g, &f)| {
                if f <= 0.0 {
                    *g = 0.0
                }
            });
        self.fc1.backward_params(&cache.x, &df)?;
        Ok(dh_prev)
    }

    /// Evaluates the head for `k = taus.len() / s.rows()` quantile levels per
    /// row; output index `row * k + j`. Point heads ignore `taus` and return
    /// one value per row.
    pub fn head(&self, s: &Tensor2, taus: &[f64]) -> Result<Vec<f64>> {
        Ok(self.head_cached(s, taus)?.0)
    }

    pub fn head_cached(&self, s: &Tensor2, taus: &[f64]) -> Result<(Vec<f64>, HeadCache)> {
        self.head_impl(s, taus, false)
    }

    /// Like [`FeatureNet::head_cached`] with the same `k = taus.len()` levels
    /// applied to every row.
    pub fn head_shared_cached(&self, s: &Tensor2, taus: &[f64]) -> Result<(Vec<f64>, HeadCache)> {
        self.head_impl(s, taus, true)
    }

    fn head_impl(&self, s: &Tensor2, taus: &[f64], shared: bool) -> Result<(Vec<f64>, HeadCache)> {
        match &self.head {
            Head::Point { fc2 } => {
                let y = fc2.forward(s)?.into_vec();
                let cache = HeadCache {
                    s: s.clone(),
                    k: 1,
                    shared,
                    quantile: None,
                };
                Ok((y, cache))
            }
            Head::Quantile { embed, fc2, fc3 } => {
                let rows = s.rows();
                if rows == 0 || taus.is_empty() || (!shared && !taus.len().is_multiple_of(rows)) {
                    return Err(Error::ShapeMismatch(format!(
                        "{} quantile levels for {} rows",
                        taus.len(),
                        rows
                    )));
                }
                let k = if shared { taus.len() } else { taus.len() / rows };
                let (phi, emb) = embed.forward_cached(taus)?;
                let mut merged = Tensor2::zeros(rows * k, WIDTH);
                for r in 0..rows {
                    let sr = s.row(r);
                    for j in 0..k {
                        let p = phi.row(if shared { j } else { r * k + j });
                        merged
                            .row_mut(r * k + j)
                            .iter_mut()
                            .zip(sr.iter().zip(p))
                            .for_each(|(m, (&a, &b))| *m = a * b);
                    }
                }
                let mut u = fc2.forward(&merged)?;
                u.map_inplace(|v| v.max(0.0));
                let y = fc3.forward(&u)?.into_vec();
                let cache = HeadCache {
                    s: s.clone(),
                    k,
                    shared,
                    quantile: Some(QuantileCache { emb, phi, merged, u }),
                };
                Ok((y, cache))
            }
        }
    }

    /// Accumulates head gradients; returns the cotangent of the trunk state.
    pub fn head_backward(&mut self, cache: &HeadCache, dy: &[f64]) -> Result<Tensor2> {
        let rows = cache.s.rows();
        if dy.len() != rows * cache.k {
            return Err(Error::ShapeMismatch(format!("head cotangent length {}", dy.len())));
        }
        match (&mut self.head, &cache.quantile) {
            (Head::Point { fc2 }, None) => fc2.backward(&cache.s, &Tensor2::from_vec(rows, 1, dy.to_vec())?),
            (Head::Quantile { embed, fc2, fc3 }, Some(q)) => {
                let k = cache.k;
                let dy = Tensor2::from_vec(rows * k, 1, dy.to_vec())?;
                let mut du = fc3.backward(&q.u, &dy)?;
                du.data_mut().iter_mut().zip(q.u.data()).for_each(|(g, &u)| {
                    if u <= 0.0 {
                        *g = 0.0
                    }
                });
                let dmerged = fc2.backward(&q.merged, &du)?;
                let mut ds = Tensor2::zeros(rows, WIDTH);
                let mut dphi = Tensor2::zeros(q.phi.rows(), WIDTH);
                for r in 0..rows {
                    let sr = cache.s.row(r);
                    for j in 0..k {
                        let i = r * k + j;
                        let pi = if cache.shared { j } else { i };
                        let (dm, phi) = (dmerged.row(i), q.phi.row(pi));
                        for (c, d) in ds.row_mut(r).iter_mut().enumerate() {
                            *d += dm[c] * phi[c];
                        }
                        dphi.row_mut(pi)
                            .iter_mut()
                            .zip(dm.iter().zip(sr))
                            .for_each(|(g, (&a, &b))| *g += a * b);
                    }
                }
                embed.backward(&q.emb, &dphi)?;
                Ok(ds)
            }
            _ => Err(Error::ShapeMismatch("head cache does not match network".into())),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.fc1.params_mut().into_iter().collect();
        if let Some(cell) = &mut self.gru {
            out.extend(cell.params_mut());
        }
        match &mut self.head {
            Head::Quantile { embed, fc2, fc3 } => {
                out.extend(embed.params_mut());
                out.extend(fc2.params_mut());
                out.extend(fc3.params_mut());
            }
            Head::Point { fc2 } => out.extend(fc2.params_mut()),
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
