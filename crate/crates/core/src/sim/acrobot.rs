use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

const MAX_VEL_1: f64 = 4.0 * PI;
const MAX_VEL_2: f64 = 9.0 * PI;
const LINK_MOI: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcrobotParams {
    pub link1_length: f64,
    pub link2_length: f64,
    pub link1_mass: f64,
    pub link2_mass: f64,
    pub dt: f64,
}

impl Default for AcrobotParams {
    fn default() -> Self {
        Self {
            link1_length: 1.0,
            link2_length: 1.0,
            link1_mass: 1.0,
            link2_mass: 1.0,
            dt: 0.2,
        }
    }
}

pub(crate) fn encode(theta1: f64, theta2: f64, dtheta1: f64, dtheta2: f64) -> [f64; 6] {
    [theta1.cos(), theta1.sin(), theta2.cos(), theta2.sin(), dtheta1, dtheta2]
}

pub(crate) fn decode(obs: [f64; 6]) -> [f64; 4] {
    [obs[1].atan2(obs[0]), obs[3].atan2(obs[2]), obs[4], obs[5]]
}

/// Time derivative of `(theta1, theta2, dtheta1, dtheta2)` under torque
/// applied at the second joint. Centres of mass sit at mid-link.
fn derivatives(p: &AcrobotParams, g: f64, s: [f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2) = (p.link1_mass, p.link2_mass);
    let l1 = p.link1_length;
    let (lc1, lc2) = (0.5 * p.link1_length, 0.5 * p.link2_length);
    let (i1, i2) = (LINK_MOI, LINK_MOI);
    let [theta1, theta2, dtheta1, dtheta2] = s;

    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

fn rk4(p: &AcrobotParams, g: f64, s: [f64; 4], torque: f64) -> [f64; 4] {
    let h = p.dt;
    let add = |a: [f64; 4], k: [f64; 4], c: f64| [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2], a[3] + c * k[3]];
    let k1 = derivatives(p, g, s, torque);
    let k2 = derivatives(p, g, add(s, k1, h / 2.0), torque);
    let k3 = derivatives(p, g, add(s, k2, h / 2.0), torque);
    let k4 = derivatives(p, g, add(s, k3, h), torque);
    let mut out = s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn wrap(x: f64) -> f64 {
    let mut y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI && x > 0.0 {
        y = PI;
    }
    y
}

pub(crate) fn rk4_step(p: &AcrobotParams, g: f64, obs: [f64; 6], torque: f64) -> [f64; 6] {
    let [t1, t2, d1, d2] = rk4(p, g, decode(obs), torque);
    encode(
        wrap(t1),
        wrap(t2),
        d1.clamp(-MAX_VEL_1, MAX_VEL_1),
        d2.clamp(-MAX_VEL_2, MAX_VEL_2),
    )
}

/// Tip above the bar one link-length over the pivot.
pub(crate) fn is_terminal(obs: &[f64; 6]) -> bool {
    let [t1, t2, _, _] = decode(*obs);
    -t1.cos() - (t1 + t2).cos() > 1.0
}

/// Total mechanical energy of an Acrobot observation (zero at the pivot
/// height, hanging-down is the minimum).
pub fn acrobot_energy(p: &AcrobotParams, g: f64, obs: &[f64]) -> f64 {
    let [t1, t2, d1, d2] = decode([obs[0], obs[1], obs[2], obs[3], obs[4], obs[5]]);
    let (m1, m2) = (p.link1_mass, p.link2_mass);
    let l1 = p.link1_length;
    let (lc1, lc2) = (0.5 * p.link1_length, 0.5 * p.link2_length);
    let m11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * t2.cos()) + 2.0 * LINK_MOI;
    let m12 = m2 * (lc2 * lc2 + l1 * lc2 * t2.cos()) + LINK_MOI;
    let m22 = m2 * lc2 * lc2 + LINK_MOI;
    let kinetic = 0.5 * (m11 * d1 * d1 + 2.0 * m12 * d1 * d2 + m22 * d2 * d2);
    let potential = -(m1 * lc1 + m2 * l1) * g * t1.cos() - m2 * lc2 * g * (t1 + t2).cos();
    kinetic + potential
}
