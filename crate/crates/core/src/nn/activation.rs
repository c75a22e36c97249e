use serde::{Deserialize, Serialize};

use super::Tensor2;

/// Elementwise nonlinearities. Backward passes are expressed in terms of the
/// forward output, which is what the layers cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at the pre-activation whose output is `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn forward_inplace(self, x: &mut Tensor2) {
        x.map_inplace(|v| self.apply(v));
    }

    pub fn forward(self, x: &Tensor2) -> Tensor2 {
        let mut y = x.clone();
        self.forward_inplace(&mut y);
        y
    }

    /// Multiplies `dy` in place by the local derivative, given the forward output.
    pub fn backward_inplace(self, y: &Tensor2, dy: &mut Tensor2) {
        debug_assert_eq!(y.shape(), dy.shape());
        dy.data_mut()
            .iter_mut()
            .zip(y.data())
            .for_each(|(g, &o)| *g *= self.derivative_from_output(o));
    }

    pub fn backward(self, y: &Tensor2, dy: &Tensor2) -> Tensor2 {
        let mut dx = dy.clone();
        self.backward_inplace(y, &mut dx);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
            let report = crate::nn::gradcheck::activation(act, 7, 30);
            assert!(report.passes(1e-4), "{act:?}: {report:?}");
        }
    }
}
