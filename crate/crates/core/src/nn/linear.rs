use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{Param, Tensor2};

/// Fully connected layer `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    /// Uniform initialization in `±1/sqrt(in)`.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut sample = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
        let w = Tensor2::from_vec(inputs, outputs, sample(inputs * outputs)).expect("shape");
        let b = Tensor2::from_vec(1, outputs, sample(outputs)).expect("shape");
        Self::from_weights(w, b).expect("shape")
    }

    pub fn from_weights(w: Tensor2, b: Tensor2) -> Result<Self> {
        if b.rows() != 1 || b.cols() != w.cols() {
            return Err(Error::ShapeMismatch(format!(
                "bias {:?} does not match weight {:?}",
                b.shape(),
                w.shape()
            )));
        }
        Ok(Self {
            w: Param::new(w),
            b: Param::new(b),
        })
    }

    pub fn inputs(&self) -> usize {
        self.w.value.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.value.cols()
    }

    fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "linear expects {} inputs, got {}",
                self.inputs(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_input(x)?;
        let mut y = Tensor2::zeros(x.rows(), self.outputs());
        let b = self.b.value.data();
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(b);
        }
        y.gemm_acc(1.0, x, false, &self.w.value, false)?;
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Tensor2, dy: &Tensor2) -> Result<Tensor2> {
        self.backward_params(x, dy)?;
        let mut dx = Tensor2::zeros(x.rows(), self.inputs());
        dx.gemm_acc(1.0, dy, false, &self.w.value, true)?;
        Ok(dx)
    }

    /// Accumulates parameter gradients only.
    pub fn backward_params(&mut self, x: &Tensor2, dy: &Tensor2) -> Result<()> {
        self.check_input(x)?;
        if dy.shape() != (x.rows(), self.outputs()) {
            return Err(Error::ShapeMismatch(format!(
                "linear cotangent {:?}, expected {:?}",
                dy.shape(),
                (x.rows(), self.outputs())
            )));
        }
        self.w.grad.gemm_acc(1.0, x, true, dy, false)?;
        self.b.grad.add_assign(&dy.sum_rows());
        Ok(())
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.w, &mut self.b]
    }
}
