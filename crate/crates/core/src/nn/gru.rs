use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::activation::sigmoid;
use super::{Param, Tensor2};

/// Gated recurrent cell.
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// h̃  = tanh(x Wh + (r ⊙ h) Uh + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// Input weights are packed as `[Wz | Wr | Wh]`, recurrent gate weights as
/// `[Uz | Ur]`, biases as `[bz | br | bh]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub wx: Param,
    pub uzr: Param,
    pub uh: Param,
    pub bias: Param,
}

/// Forward intermediates needed by [`GruCell::backward`].
#[derive(Debug, Clone)]
pub struct GruCache {
    x: Tensor2,
    h_prev: Tensor2,
    z: Tensor2,
    r: Tensor2,
    rh: Tensor2,
    cand: Tensor2,
}

impl GruCell {
    pub fn new(inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        let mut t = |r: usize, c: usize| {
            let data = (0..r * c).map(|_| rng.random_range(-bound..bound)).collect();
            Param::new(Tensor2::from_vec(r, c, data).expect("shape"))
        };
        Self {
            wx: t(inputs, 3 * hidden),
            uzr: t(hidden, 2 * hidden),
            uh: t(hidden, hidden),
            bias: t(1, 3 * hidden),
        }
    }

    pub fn inputs(&self) -> usize {
        self.wx.value.rows()
    }

    pub fn hidden(&self) -> usize {
        self.uh.value.rows()
    }

    fn check(&self, x: &Tensor2, h: &Tensor2) -> Result<()> {
        if x.cols() != self.inputs() || h.cols() != self.hidden() || x.rows() != h.rows() {
            return Err(Error::ShapeMismatch(format!(
                "gru({}, {}) got x {:?}, h {:?}",
                self.inputs(),
                self.hidden(),
                x.shape(),
                h.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor2, h: &Tensor2) -> Result<Tensor2> {
        Ok(self.forward_cached(x, h)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor2, h: &Tensor2) -> Result<(Tensor2, GruCache)> {
        self.check(x, h)?;
        let n = x.rows();
        let hd = self.hidden();
        let mut xw = Tensor2::zeros(n, 3 * hd);
        for i in 0..n {
            xw.row_mut(i).copy_from_slice(self.bias.value.data());
        }
        xw.gemm_acc(1.0, x, false, &self.wx.value, false)?;
        let mut hu = Tensor2::zeros(n, 2 * hd);
        hu.gemm_acc(1.0, h, false, &self.uzr.value, false)?;

        let mut z = Tensor2::zeros(n, hd);
        let mut r = Tensor2::zeros(n, hd);
        let mut rh = Tensor2::zeros(n, hd);
        for i in 0..n {
            let (xw_i, hu_i, h_i) = (xw.row(i), hu.row(i), h.row(i));
            let z_i = z.row_mut(i);
            for k in 0..hd {
                z_i[k] = sigmoid(xw_i[k] + hu_i[k]);
            }
            let r_i = r.row_mut(i);
            for k in 0..hd {
                r_i[k] = sigmoid(xw_i[hd + k] + hu_i[hd + k]);
            }
            let rh_i = rh.row_mut(i);
            for k in 0..hd {
                rh_i[k] = r.row(i)[k] * h_i[k];
            }
        }
        let mut cand = Tensor2::zeros(n, hd);
        for i in 0..n {
            cand.row_mut(i).copy_from_slice(&xw.row(i)[2 * hd..]);
        }
        cand.gemm_acc(1.0, &rh, false, &self.uh.value, false)?;
        cand.map_inplace(f64::tanh);

        let mut out = Tensor2::zeros(n, hd);
        for i in 0..n {
            let (z_i, c_i, h_i) = (z.row(i), cand.row(i), h.row(i));
            for (k, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = (1.0 - z_i[k]) * h_i[k] + z_i[k] * c_i[k];
            }
        }
        let cache = GruCache {
            x: x.clone(),
            h_prev: h.clone(),
            z,
            r,
            rh,
            cand,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients; returns `(dx, dh_prev)`.
    pub fn backward(&mut self, cache: &GruCache, dh: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let n = cache.x.rows();
        let hd = self.hidden();
        if dh.shape() != (n, hd) {
            return Err(Error::ShapeMismatch(format!("gru cotangent {:?}, expected {:?}", dh.shape(), (n, hd))));
        }
        let mut dgates = Tensor2::zeros(n, 3 * hd);
        let mut dh_prev = Tensor2::zeros(n, hd);
        for i in 0..n {
            let (z, c, h, dh_i) = (cache.z.row(i), cache.cand.row(i), cache.h_prev.row(i), dh.row(i));
            let g = dgates.row_mut(i);
            for k in 0..hd {
                let dz = dh_i[k] * (c[k] - h[k]);
                g[k] = dz * z[k] * (1.0 - z[k]);
                g[2 * hd + k] = dh_i[k] * z[k] * (1.0 - c[k] * c[k]);
            }
            let dp = dh_prev.row_mut(i);
            for k in 0..hd {
                dp[k] = dh_i[k] * (1.0 - z[k]);
            }
        }
        let da_c = Tensor2::from_vec(
            n,
            hd,
            dgates.iter_rows().flat_map(|r| r[2 * hd..].iter().copied()).collect(),
        )?;
        self.uh.grad.gemm_acc(1.0, &cache.rh, true, &da_c, false)?;
        let mut drh = Tensor2::zeros(n, hd);
        drh.gemm_acc(1.0, &da_c, false, &self.uh.value, true)?;
        for i in 0..n {
            let (r, h, drh_i) = (cache.r.row(i), cache.h_prev.row(i), drh.row(i));
            let g = dgates.row_mut(i);
            for k in 0..hd {
                g[hd + k] = drh_i[k] * h[k] * r[k] * (1.0 - r[k]);
            }
            let dp = dh_prev.row_mut(i);
            for k in 0..hd {
                dp[k] += drh_i[k] * r[k];
            }
        }
        self.wx.grad.gemm_acc(1.0, &cache.x, true, &dgates, false)?;
        self.bias.grad.add_assign(&dgates.sum_rows());
        let dzr = Tensor2::from_vec(
            n,
            2 * hd,
            dgates.iter_rows().flat_map(|r| r[..2 * hd].iter().copied()).collect(),
        )?;
        self.uzr.grad.gemm_acc(1.0, &cache.h_prev, true, &dzr, false)?;
        dh_prev.gemm_acc(1.0, &dzr, false, &self.uzr.value, true)?;
        let mut dx = Tensor2::zeros(n, self.inputs());
        dx.gemm_acc(1.0, &dgates, false, &self.wx.value, true)?;
        Ok((dx, dh_prev))
    }

    pub fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.wx, &mut self.uzr, &mut self.uh, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn closed_update_gate_keeps_state() {
        let mut cell = GruCell::new(3, 4, &mut stream(2));
        for k in 0..4 {
            cell.bias.value.set(0, k, -40.0);
        }
        let x = Tensor2::from_rows(&[vec![0.3, -0.5, 0.9]]).unwrap();
        let h = Tensor2::from_rows(&[vec![0.1, -0.7, 0.4, 0.0]]).unwrap();
        let out = cell.forward(&x, &h).unwrap();
        for k in 0..4 {
            assert!((out.get(0, k) - h.get(0, k)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_everything_is_a_fixed_point() {
        let mut cell = GruCell::new(2, 3, &mut stream(3));
        for p in cell.params_mut() {
            p.value.fill(0.0);
        }
        let out = cell.forward(&Tensor2::zeros(2, 2), &Tensor2::zeros(2, 3)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let cell = GruCell::new(2, 3, &mut stream(4));
        let x = Tensor2::from_rows(&[vec![0.1, 0.2], vec![-1.0, 0.5]]).unwrap();
        let h = Tensor2::from_rows(&[vec![0.3, 0.0, -0.2], vec![0.9, -0.9, 0.1]]).unwrap();
        let both = cell.forward(&x, &h).unwrap();
        for i in 0..2 {
            let one = cell.forward(&x.slice_rows(i, i + 1), &h.slice_rows(i, i + 1)).unwrap();
            for k in 0..3 {
                assert!((one.get(0, k) - both.get(i, k)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bptt_gradients_match_finite_differences() {
        let report = crate::nn::gradcheck::gru_sequence(5, 13, 40);
        assert!(report.passes(1e-4), "{report:?}");
    }
}
