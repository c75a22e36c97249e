//! Scripted stand-ins for trained nominal controllers.

use super::{acrobot, acrobot_energy, Action, AcrobotParams, EnvKind, EnvState, NOMINAL_GRAVITY};

/// Linear feedback gains on `(x, x_dot, theta, theta_dot)` for CartPole.
/// The controller pushes right iff `gains · obs > 0`.
pub const CARTPOLE_GAINS: [f64; 4] = [0.05, 0.3, 1.0, 0.3];

/// Deterministic nominal controller.
///
/// CartPole uses bang-bang linear feedback. Acrobot pumps energy: while the
/// mechanical energy (evaluated with nominal parameters) is below the
/// upright-rest energy, the elbow torque opposes `dtheta1`; above it the
/// sign flips and the torque removes energy.
pub fn nominal_policy(kind: EnvKind, state: &EnvState) -> Action {
    let o = &state.obs;
    match kind {
        EnvKind::CartPole => {
            let u: f64 = CARTPOLE_GAINS.iter().zip(o).map(|(w, x)| w * x).sum();
            if u > 0.0 {
                Action::RIGHT
            } else {
                Action::LEFT
            }
        }
        EnvKind::Acrobot => {
            let [_, _, d1, _] = acrobot::decode([o[0], o[1], o[2], o[3], o[4], o[5]]);
            let p = AcrobotParams::default();
            let goal = (p.link1_mass * 0.5 * p.link1_length + p.link2_mass * p.link1_length) * NOMINAL_GRAVITY
                + p.link2_mass * 0.5 * p.link2_length * NOMINAL_GRAVITY;
            let deficit = goal - acrobot_energy(&p, NOMINAL_GRAVITY, o);
            let u = -d1 * deficit;
            if u > 0.0 {
                Action::TORQUE_POS
            } else if u < 0.0 {
                Action::TORQUE_NEG
            } else {
                Action::TORQUE_ZERO
            }
        }
    }
}
