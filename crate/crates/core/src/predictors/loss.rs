/// Asymmetric Huber loss of a quantile estimate.
///
/// With `δ = target − prediction`, returns `|τ − 1{δ<0}| · L_κ(δ) / κ` where
/// `L_κ` is the Huber loss.
pub fn quantile_huber(prediction: f64, target: f64, tau: f64, kappa: f64) -> f64 {
    let delta = target - prediction;
    let huber = if delta.abs() <= kappa {
        0.5 * delta * delta
    } else {
        kappa * (delta.abs() - 0.5 * kappa)
    };
    (tau - indicator(delta)).abs() * huber / kappa
}

/// Derivative of [`quantile_huber`] with respect to the prediction.
pub fn quantile_huber_grad(prediction: f64, target: f64, tau: f64, kappa: f64) -> f64 {
    let delta = target - prediction;
    let dhuber = delta.clamp(-kappa, kappa);
    -(tau - indicator(delta)).abs() * dhuber / kappa
}

fn indicator(delta: f64) -> f64 {
    if delta < 0.0 {
        1.0
    } else {
        0.0
    }
}
