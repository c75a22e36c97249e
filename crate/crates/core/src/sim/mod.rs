//! Classic-control simulators and scripted nominal controllers.
//!
//! Both environments follow the published classic-control equations of
//! motion: CartPole integrates with explicit Euler at `dt = 0.02`, Acrobot
//! with fourth-order Runge-Kutta at `dt = 0.2`. Simulation is a pure
//! function of `(params, state, action)`.

mod acrobot;
mod cartpole;
mod policy;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use acrobot::{acrobot_energy, AcrobotParams};
pub use cartpole::{cartpole_step_with_force, CartPoleParams};
pub use policy::{nominal_policy, CARTPOLE_GAINS};

/// Nominal gravitational acceleration in m/s².
pub const NOMINAL_GRAVITY: f64 = 9.8;
/// Default episode horizon for desk-scale runs.
pub const DESK_HORIZON: usize = 200;
/// Episode horizon used by full-scale runs.
pub const FULL_HORIZON: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    CartPole,
    Acrobot,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::CartPole, EnvKind::Acrobot];

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::CartPole => 4,
            EnvKind::Acrobot => 6,
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            EnvKind::CartPole => 2,
            EnvKind::Acrobot => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::Acrobot => "acrobot",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" | "cart_pole" => Ok(EnvKind::CartPole),
            "acrobot" => Ok(EnvKind::Acrobot),
            other => Err(Error::UnsupportedEnv(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "lowercase")]
pub enum Body {
    CartPole(CartPoleParams),
    Acrobot(AcrobotParams),
}

/// Physical parameters plus the episode horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub gravity: f64,
    pub horizon: usize,
    pub body: Body,
}

impl EnvParams {
    pub fn kind(&self) -> EnvKind {
        match self.body {
            Body::CartPole(_) => EnvKind::CartPole,
            Body::Acrobot(_) => EnvKind::Acrobot,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("gravity", self.gravity)?;
        let dt = match self.body {
            Body::CartPole(p) => {
                positive("cart_mass", p.cart_mass)?;
                positive("pole_mass", p.pole_mass)?;
                positive("pole_half_length", p.pole_half_length)?;
                positive("force_magnitude", p.force_magnitude)?;
                p.dt
            }
            Body::Acrobot(p) => {
                positive("link1_length", p.link1_length)?;
                positive("link2_length", p.link2_length)?;
                positive("link1_mass", p.link1_mass)?;
                positive("link2_mass", p.link2_mass)?;
                p.dt
            }
        };
        // Acrobot's published control interval is 0.2 s
        let max_dt = match self.kind() {
            EnvKind::CartPole => 0.1,
            EnvKind::Acrobot => 0.2,
        };
        if !(dt > 0.0 && dt <= max_dt) {
            return Err(Error::InvalidArgument(format!("dt out of range: {dt}")));
        }
        Ok(())
    }
}

/// Published classic-control defaults with the desk-scale horizon.
pub fn default_params(kind: EnvKind) -> EnvParams {
    let body = match kind {
        EnvKind::CartPole => Body::CartPole(CartPoleParams::default()),
        EnvKind::Acrobot => Body::Acrobot(AcrobotParams::default()),
    };
    EnvParams {
        gravity: NOMINAL_GRAVITY,
        horizon: DESK_HORIZON,
        body,
    }
}

/// Discrete action index.
///
/// CartPole: 0 pushes left, 1 pushes right. Acrobot: 0, 1, 2 apply a torque
/// of -1, 0, +1 N·m to the elbow joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action(pub usize);

impl Action {
    pub const LEFT: Action = Action(0);
    pub const RIGHT: Action = Action(1);
    pub const TORQUE_NEG: Action = Action(0);
    pub const TORQUE_ZERO: Action = Action(1);
    pub const TORQUE_POS: Action = Action(2);
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub obs: Vec<f64>,
    pub step_index: usize,
    pub done: bool,
}

/// Draws an initial state. CartPole components are uniform in ±0.05;
/// Acrobot angles and velocities are uniform in ±0.1.
pub fn reset(kind: EnvKind, seed: u64) -> EnvState {
    let mut rng = rng::stream(seed);
    let obs = match kind {
        EnvKind::CartPole => (0..4).map(|_| rng.random_range(-0.05..=0.05)).collect(),
        EnvKind::Acrobot => {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-0.1..=0.1)).collect();
            acrobot::encode(s[0], s[1], s[2], s[3]).to_vec()
        }
    };
    EnvState {
        obs,
        step_index: 0,
        done: false,
    }
}

/// Advances the environment by one control step.
pub fn step(params: &EnvParams, state: &EnvState, action: Action) -> Result<EnvState> {
    if state.done {
        return Err(Error::StepAfterDone);
    }
    let kind = params.kind();
    if action.0 >= kind.action_count() {
        return Err(Error::InvalidAction {
            env: kind.name(),
            action: action.0,
            count: kind.action_count(),
        });
    }
    if state.obs.len() != kind.obs_dim() {
        return Err(Error::ShapeMismatch(format!(
            "{kind} state has {} components, expected {}",
            state.obs.len(),
            kind.obs_dim()
        )));
    }
    let step_index = state.step_index + 1;
    let (obs, terminal) = match params.body {
        Body::CartPole(p) => {
            let force = if action == Action::RIGHT {
                p.force_magnitude
            } else {
                -p.force_magnitude
            };
            let next = cartpole::euler_step(&p, params.gravity, as4(&state.obs), force);
            (next.to_vec(), cartpole::is_terminal(&next))
        }
        Body::Acrobot(p) => {
            let torque = action.0 as f64 - 1.0;
            let next = acrobot::rk4_step(&p, params.gravity, as6(&state.obs), torque);
            let terminal = acrobot::is_terminal(&next);
            (next.to_vec(), terminal)
        }
    };
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{kind} step {step_index}")));
    }
    Ok(EnvState {
        obs,
        step_index,
        done: terminal || step_index >= params.horizon,
    })
}

fn as4(obs: &[f64]) -> [f64; 4] {
    [obs[0], obs[1], obs[2], obs[3]]
}

fn as6(obs: &[f64]) -> [f64; 6] {
    [obs[0], obs[1], obs[2], obs[3], obs[4], obs[5]]
}
