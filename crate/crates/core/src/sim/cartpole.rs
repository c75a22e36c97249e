use serde::{Deserialize, Serialize};

/// Pole angle beyond which the episode ends (12 degrees).
pub(crate) const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub(crate) const X_LIMIT: f64 = 2.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_magnitude: f64,
    pub dt: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_magnitude: 10.0,
            dt: 0.02,
        }
    }
}

/// Returns `(x_acc, theta_acc)` for state `(x, x_dot, theta, theta_dot)`.
pub(crate) fn accelerations(p: &CartPoleParams, gravity: f64, s: [f64; 4], force: f64) -> (f64, f64) {
    let [_, _, theta, theta_dot] = s;
    let total_mass = p.cart_mass + p.pole_mass;
    let pole_mass_length = p.pole_mass * p.pole_half_length;
    let (sin_t, cos_t) = theta.sin_cos();
    let temp = (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
    let theta_acc = (gravity * sin_t - cos_t * temp)
        / (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
    let x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;
    (x_acc, theta_acc)
}

pub(crate) fn euler_step(p: &CartPoleParams, gravity: f64, s: [f64; 4], force: f64) -> [f64; 4] {
    let (x_acc, theta_acc) = accelerations(p, gravity, s, force);
    let [x, x_dot, theta, theta_dot] = s;
    [
        x + p.dt * x_dot,
        x_dot + p.dt * x_acc,
        theta + p.dt * theta_dot,
        theta_dot + p.dt * theta_acc,
    ]
}

pub(crate) fn is_terminal(s: &[f64; 4]) -> bool {
    s[0].abs() > X_LIMIT || s[2].abs() > THETA_LIMIT
}

/// One Euler step under an arbitrary horizontal force. The discrete action
/// space only offers `±force_magnitude`; this entry point exists for
/// analysis of the raw equations (e.g. the zero-force equilibrium).
pub fn cartpole_step_with_force(p: &CartPoleParams, gravity: f64, s: [f64; 4], force: f64) -> [f64; 4] {
    euler_step(p, gravity, s, force)
}
