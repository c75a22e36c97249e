//! Central finite-difference checks of the analytic backward passes.
//!
//! Each check builds a small random layer, takes the scalar loss
//! `L = Σ c ⊙ y` for a random cotangent `c`, and compares analytic
//! derivatives with `(L(v + h) − L(v − h)) / 2h` at randomly drawn
//! coordinates of parameters and inputs.

use rand::Rng as _;

use crate::rng::{stream, Rng};

use super::{Activation, GruCell, Linear, Param, QuantileEmbedding, Tensor2};

pub const STEP: f64 = 1e-5;
/// Denominator floor so exactly-zero gradients compare by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.probes > 0 && self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn random_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor2 {
    Tensor2::from_vec(rows, cols, data.to_vec()).expect("shape")
}

fn dot(a: &Tensor2, c: &[f64]) -> f64 {
    a.data().iter().zip(c).map(|(x, y)| x * y).sum()
}

/// Compares `grads` against finite differences of `eval` at `probes`
/// coordinates drawn uniformly over named slots.
fn compare(
    names: &[&str],
    slots: Vec<Vec<f64>>,
    grads: &[Vec<f64>],
    eval: impl Fn(&[Vec<f64>]) -> f64,
    rng: &mut Rng,
    probes: usize,
) -> GradCheckReport {
    let mut slots = slots;
    let mut report = GradCheckReport {
        probes,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for _ in 0..probes {
        let s = rng.random_range(0..slots.len());
        let i = rng.random_range(0..slots[s].len());
        let orig = slots[s][i];
        slots[s][i] = orig + STEP;
        let plus = eval(&slots);
        slots[s][i] = orig - STEP;
        let minus = eval(&slots);
        slots[s][i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        let err = relative_error(grads[s][i], numeric);
        if err > report.max_rel_err || !err.is_finite() {
            report.max_rel_err = if err.is_finite() { err } else { f64::INFINITY };
            report.worst = format!("{}[{}]: analytic {:e}, numeric {:e}", names[s], i, grads[s][i], numeric);
        }
    }
    report
}

fn linear_from(w: &[f64], b: &[f64], inputs: usize, outputs: usize) -> Linear {
    Linear::from_weights(t(inputs, outputs, w), t(1, outputs, b)).expect("shape")
}

pub fn linear(seed: u64, probes: usize) -> GradCheckReport {
    let (n, i, o) = (3, 5, 4);
    let mut rng = stream(seed);
    let mut layer = Linear::new(i, o, &mut rng);
    let x = t(n, i, &random_vec(&mut rng, n * i, 1.0));
    let c = random_vec(&mut rng, n * o, 1.0);
    let dx = layer.backward(&x, &t(n, o, &c)).expect("backward");
    let grads = vec![layer.w.grad.data().to_vec(), layer.b.grad.data().to_vec(), dx.into_vec()];
    let slots = vec![layer.w.value.data().to_vec(), layer.b.value.data().to_vec(), x.into_vec()];
    let eval = |s: &[Vec<f64>]| {
        let l = linear_from(&s[0], &s[1], i, o);
        dot(&l.forward(&t(n, i, &s[2])).expect("forward"), &c)
    };
    compare(&["w", "b", "x"], slots, &grads, eval, &mut rng, probes)
}

pub fn activation(act: Activation, seed: u64, probes: usize) -> GradCheckReport {
    let (n, m) = (4, 6);
    let mut rng = stream(seed);
    // keep ReLU inputs away from the kink so the difference quotient is valid
    let x: Vec<f64> = (0..n * m)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let c = random_vec(&mut rng, n * m, 1.0);
    let y = act.forward(&t(n, m, &x));
    let dx = act.backward(&y, &t(n, m, &c));
    let eval = |s: &[Vec<f64>]| dot(&act.forward(&t(n, m, &s[0])), &c);
    compare(&["x"], vec![x], &[dx.into_vec()], eval, &mut rng, probes)
}

fn gru_from(s: &[Vec<f64>], i: usize, h: usize) -> GruCell {
    GruCell {
        wx: Param::new(t(i, 3 * h, &s[0])),
        uzr: Param::new(t(h, 2 * h, &s[1])),
        uh: Param::new(t(h, h, &s[2])),
        bias: Param::new(t(1, 3 * h, &s[3])),
    }
}

/// Backpropagation through time over `len` steps; the loss touches every
/// hidden state.
pub fn gru_sequence(len: usize, seed: u64, probes: usize) -> GradCheckReport {
    let (n, i, h) = (2, 3, 4);
    let mut rng = stream(seed);
    let mut cell = GruCell::new(i, h, &mut rng);
    let xs = random_vec(&mut rng, len * n * i, 1.0);
    let h0 = random_vec(&mut rng, n * h, 0.8);
    let cs = random_vec(&mut rng, len * n * h, 1.0);
    let step_x = |xs: &[f64], k: usize| t(n, i, &xs[k * n * i..(k + 1) * n * i]);
    let step_c = |k: usize| &cs[k * n * h..(k + 1) * n * h];

    let mut hs = t(n, h, &h0);
    let mut caches = Vec::with_capacity(len);
    for k in 0..len {
        let (next, cache) = cell.forward_cached(&step_x(&xs, k), &hs).expect("forward");
        caches.push(cache);
        hs = next;
    }
    let mut dxs = vec![0.0; xs.len()];
    let mut carry = Tensor2::zeros(n, h);
    for k in (0..len).rev() {
        carry.add_assign(&t(n, h, step_c(k)));
        let (dx, dh) = cell.backward(&caches[k], &carry).expect("backward");
        dxs[k * n * i..(k + 1) * n * i].copy_from_slice(dx.data());
        carry = dh;
    }
    let grads = vec![
        cell.wx.grad.data().to_vec(),
        cell.uzr.grad.data().to_vec(),
        cell.uh.grad.data().to_vec(),
        cell.bias.grad.data().to_vec(),
        dxs,
        carry.into_vec(),
    ];
    let slots = vec![
        cell.wx.value.data().to_vec(),
        cell.uzr.value.data().to_vec(),
        cell.uh.value.data().to_vec(),
        cell.bias.value.data().to_vec(),
        xs.clone(),
        h0.clone(),
    ];
    let eval = |s: &[Vec<f64>]| {
        let cell = gru_from(s, i, h);
        let mut hs = t(n, h, &s[5]);
        let mut loss = 0.0;
        for k in 0..len {
            hs = cell.forward(&step_x(&s[4], k), &hs).expect("forward");
            loss += dot(&hs, step_c(k));
        }
        loss
    };
    compare(&["wx", "uzr", "uh", "bias", "x", "h0"], slots, &grads, eval, &mut rng, probes)
}

pub fn quantile_embedding(seed: u64, probes: usize) -> GradCheckReport {
    let (n_cos, width, k) = (16, 8, 5);
    let mut rng = stream(seed);
    let mut emb = QuantileEmbedding::new(n_cos, width, &mut rng);
    let taus: Vec<f64> = (0..k).map(|_| rng.random_range(0.02..0.98)).collect();
    let c = random_vec(&mut rng, k * width, 1.0);
    let (_, cache) = emb.forward_cached(&taus).expect("forward");
    let dtau = emb.backward_with_tau(&cache, &t(k, width, &c)).expect("backward");
    let grads = vec![
        emb.linear.w.grad.data().to_vec(),
        emb.linear.b.grad.data().to_vec(),
        dtau,
    ];
    let slots = vec![
        emb.linear.w.value.data().to_vec(),
        emb.linear.b.value.data().to_vec(),
        taus,
    ];
    let eval = |s: &[Vec<f64>]| {
        let e = QuantileEmbedding {
            linear: linear_from(&s[0], &s[1], n_cos, width),
        };
        dot(&e.forward(&s[2]).expect("forward"), &c)
    };
    compare(&["w", "b", "tau"], slots, &grads, eval, &mut rng, probes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(2.0, 2.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = stream(1);
        let eval = |s: &[Vec<f64>]| s[0][0] * s[0][0];
        let report = compare(&["v"], vec![vec![1.5]], &[vec![2.0]], eval, &mut rng, 3);
        assert!(!report.passes(1e-4));
    }
}
