//! Finite-difference gradient checks for every network building block.

use oodd::nn::{gradcheck, Activation};

fn main() {
    let reports = [
        ("linear", gradcheck::linear(1, 30)),
        ("relu", gradcheck::activation(Activation::Relu, 2, 30)),
        ("tanh", gradcheck::activation(Activation::Tanh, 3, 30)),
        ("sigmoid", gradcheck::activation(Activation::Sigmoid, 4, 30)),
        ("gru (8 steps)", gradcheck::gru_sequence(8, 5, 30)),
        ("quantile embedding", gradcheck::quantile_embedding(6, 30)),
    ];
    for (name, r) in reports {
        println!(
            "{name:>20}: {} probes, max relative error {:.2e} [{}]",
            r.probes,
            r.max_rel_err,
            if r.passes(1e-4) { "ok" } else { "FAIL" }
        );
    }
}
