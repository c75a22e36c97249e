//! Sensor- and dynamics-injected anomalies.
//!
//! Sensor anomalies rewrite the observation the controller (and the
//! detector) sees. Dynamics anomalies alter the simulator parameters or the
//! executed action. Every transform is the identity before the injection
//! step.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::sim::{Action, Body, EnvKind, EnvParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    IidNoise,
    SensorShutdown,
    CalibrationFailure,
    SensorDrift,
    #[serde(rename = "wind_l2r")]
    WindL2R,
    #[serde(rename = "wind_r2l")]
    WindR2L,
    GravityManipulation,
    ComponentManipulation,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 8] = [
        AnomalyKind::IidNoise,
        AnomalyKind::SensorShutdown,
        AnomalyKind::CalibrationFailure,
        AnomalyKind::SensorDrift,
        AnomalyKind::WindL2R,
        AnomalyKind::WindR2L,
        AnomalyKind::GravityManipulation,
        AnomalyKind::ComponentManipulation,
    ];

    pub fn is_sensor(self) -> bool {
        matches!(
            self,
            AnomalyKind::IidNoise
                | AnomalyKind::SensorShutdown
                | AnomalyKind::CalibrationFailure
                | AnomalyKind::SensorDrift
        )
    }

    pub fn group(self) -> AnomalyGroup {
        if self.is_sensor() {
            AnomalyGroup::Sensor
        } else {
            AnomalyGroup::Dynamics
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::IidNoise => "iid_noise",
            AnomalyKind::SensorShutdown => "sensor_shutdown",
            AnomalyKind::CalibrationFailure => "calibration_failure",
            AnomalyKind::SensorDrift => "sensor_drift",
            AnomalyKind::WindL2R => "wind_l2r",
            AnomalyKind::WindR2L => "wind_r2l",
            AnomalyKind::GravityManipulation => "gravity_manipulation",
            AnomalyKind::ComponentManipulation => "component_manipulation",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown anomaly kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyGroup {
    Sensor,
    Dynamics,
}

impl AnomalyGroup {
    pub fn name(self) -> &'static str {
        match self {
            AnomalyGroup::Sensor => "sensor",
            AnomalyGroup::Dynamics => "dynamics",
        }
    }
}

/// A physical attribute that component manipulation may overwrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    PoleHalfLength,
    PoleMass,
    Link1Length,
    Link2Length,
    Link1Mass,
    Link2Mass,
}

impl Component {
    fn for_env(env: EnvKind) -> &'static [Component] {
        match env {
            EnvKind::CartPole => &[Component::PoleHalfLength, Component::PoleMass],
            EnvKind::Acrobot => &[
                Component::Link1Length,
                Component::Link2Length,
                Component::Link1Mass,
                Component::Link2Mass,
            ],
        }
    }
}

/// Sampled magnitudes of one anomaly instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnomalyParams {
    IidNoise { mean: f64, std: f64 },
    SensorShutdown,
    CalibrationFailure { factor: f64 },
    SensorDrift { rate: f64 },
    Wind { probability: f64 },
    Gravity { value: f64 },
    Components { values: Vec<(Component, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub env: EnvKind,
    pub inject_step: usize,
    /// Affected observation features; all false for dynamics anomalies.
    pub feature_mask: Vec<bool>,
    pub params: AnomalyParams,
    pub rng_seed: u64,
}

/// Per-environment anomaly magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyTable {
    pub iid_mean: f64,
    pub iid_std: f64,
    pub calibration: f64,
    pub drift_rate: f64,
    pub wind_probability: f64,
    pub gravity: (f64, f64),
    pub length: (f64, f64),
    pub mass: (f64, f64),
    pub length_floor: f64,
    pub mass_floor: f64,
}

impl AnomalyTable {
    pub fn for_env(env: EnvKind) -> Self {
        match env {
            EnvKind::Acrobot => AnomalyTable {
                iid_mean: 2.0,
                iid_std: 2.0,
                calibration: 10.0,
                drift_rate: 5e-3,
                wind_probability: 0.66,
                gravity: (10.0, 11.0),
                length: (0.5, 2.0),
                mass: (0.5, 2.0),
                length_floor: 0.5,
                mass_floor: 0.5,
            },
            EnvKind::CartPole => AnomalyTable {
                iid_mean: 1.0,
                iid_std: 2.0,
                calibration: 3.0,
                drift_rate: 2e-4,
                wind_probability: 0.66,
                gravity: (9.0, 11.0),
                length: (0.0, 2.0),
                mass: (0.0, 1.0),
                length_floor: 0.05,
                mass_floor: 0.01,
            },
        }
    }

    fn range(&self, c: Component) -> (f64, f64, f64) {
        match c {
            Component::PoleHalfLength | Component::Link1Length | Component::Link2Length => {
                (self.length.0, self.length.1, self.length_floor)
            }
            Component::PoleMass | Component::Link1Mass | Component::Link2Mass => {
                (self.mass.0, self.mass.1, self.mass_floor)
            }
        }
    }
}

/// Largest number of sensor features an anomaly may touch.
pub fn max_masked_features(obs_dim: usize) -> usize {
    (obs_dim / 5).max(1)
}

/// Samples one anomaly instance.
///
/// The injection step is uniform over `[horizon / 10, 9 * horizon / 10]`;
/// sensor anomalies corrupt one uniformly chosen feature.
pub fn sample_spec(kind: AnomalyKind, env: EnvKind, horizon: usize, seed: u64) -> Result<AnomalySpec> {
    if horizon < 10 {
        return Err(Error::InvalidArgument(format!("horizon must be >= 10, got {horizon}")));
    }
    let table = AnomalyTable::for_env(env);
    let mut rng = rng::stream(seed);
    let inject_step = rng.random_range(horizon / 10..=9 * horizon / 10);
    let d = env.obs_dim();
    let mut feature_mask = vec![false; d];
    if kind.is_sensor() {
        for i in index::sample(&mut rng, d, 1) {
            feature_mask[i] = true;
        }
    }
    let params = match kind {
        AnomalyKind::IidNoise => AnomalyParams::IidNoise {
            mean: table.iid_mean,
            std: table.iid_std,
        },
        AnomalyKind::SensorShutdown => AnomalyParams::SensorShutdown,
        AnomalyKind::CalibrationFailure => AnomalyParams::CalibrationFailure {
            factor: table.calibration,
        },
        AnomalyKind::SensorDrift => AnomalyParams::SensorDrift {
            rate: table.drift_rate,
        },
        AnomalyKind::WindL2R | AnomalyKind::WindR2L => AnomalyParams::Wind {
            probability: table.wind_probability,
        },
        AnomalyKind::GravityManipulation => AnomalyParams::Gravity {
            value: rng.random_range(table.gravity.0..=table.gravity.1),
        },
        AnomalyKind::ComponentManipulation => {
            let fields = Component::for_env(env);
            // non-empty random subset, each attribute kept with probability 1/2
            let chosen: Vec<Component> = loop {
                let pick: Vec<Component> = fields.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
                if !pick.is_empty() {
                    break pick;
                }
            };
            let values = chosen
                .into_iter()
                .map(|c| {
                    let (lo, hi, floor) = table.range(c);
                    (c, rng.random_range(lo..=hi).max(floor))
                })
                .collect();
            AnomalyParams::Components { values }
        }
    };
    Ok(AnomalySpec {
        kind,
        env,
        inject_step,
        feature_mask,
        params,
        rng_seed: rng::mix(seed, 0xA11),
    })
}

impl AnomalySpec {
    /// Checks the parameters against the magnitude table and mask limits.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let table = AnomalyTable::for_env(self.env);
        let bad = |why: String| Err(Error::InvalidArgument(format!("{} spec: {why}", self.kind)));
        if self.inject_step >= horizon {
            return bad(format!("inject_step {} >= horizon {horizon}", self.inject_step));
        }
        let d = self.env.obs_dim();
        if self.feature_mask.len() != d {
            return bad(format!("mask has {} entries, expected {d}", self.feature_mask.len()));
        }
        let masked = self.feature_mask.iter().filter(|m| **m).count();
        if self.kind.is_sensor() && !(1..=max_masked_features(d)).contains(&masked) {
            return bad(format!("{masked} masked features"));
        }
        if !self.kind.is_sensor() && masked != 0 {
            return bad("dynamics anomaly with a feature mask".into());
        }
        let ok = match (&self.params, self.kind) {
            (AnomalyParams::IidNoise { mean, std }, AnomalyKind::IidNoise) => {
                *mean == table.iid_mean && *std == table.iid_std
            }
            (AnomalyParams::SensorShutdown, AnomalyKind::SensorShutdown) => true,
            (AnomalyParams::CalibrationFailure { factor }, AnomalyKind::CalibrationFailure) => {
                *factor == table.calibration
            }
            (AnomalyParams::SensorDrift { rate }, AnomalyKind::SensorDrift) => *rate == table.drift_rate,
            (AnomalyParams::Wind { probability }, AnomalyKind::WindL2R | AnomalyKind::WindR2L) => {
                *probability == table.wind_probability
            }
            (AnomalyParams::Gravity { value }, AnomalyKind::GravityManipulation) => {
                (table.gravity.0..=table.gravity.1).contains(value)
            }
            (AnomalyParams::Components { values }, AnomalyKind::ComponentManipulation) => {
                !values.is_empty()
                    && values.iter().all(|(c, v)| {
                        let (lo, hi, floor) = table.range(*c);
                        Component::for_env(self.env).contains(c) && *v >= lo.max(floor) && *v <= hi
                    })
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            bad(format!("parameters out of range: {:?}", self.params))
        }
    }

    /// Random stream used by the per-step corruption transforms.
    pub fn corruption_rng(&self) -> Rng {
        rng::stream(self.rng_seed)
    }
}

/// Applies a sensor anomaly to the observation seen at step `t`.
pub fn corrupt_observation(spec: &AnomalySpec, obs: &[f64], t: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if !spec.kind.is_sensor() {
        return Err(Error::WrongKind {
            kind: spec.kind.name(),
            expected: "a sensor anomaly",
        });
    }
    let mut out = obs.to_vec();
    if t < spec.inject_step {
        return Ok(out);
    }
    let elapsed = (t - spec.inject_step) as f64;
    for (value, &masked) in out.iter_mut().zip(&spec.feature_mask) {
        if !masked {
            continue;
        }
        match spec.params {
            AnomalyParams::IidNoise { mean, std } => *value += gaussian(mean, std, rng),
            AnomalyParams::SensorShutdown => *value = 0.0,
            AnomalyParams::CalibrationFailure { factor } => *value *= factor,
            AnomalyParams::SensorDrift { rate } => {
                let std = rate * elapsed;
                if std > 0.0 {
                    *value += gaussian(0.0, std, rng);
                }
            }
            _ => {
                return Err(Error::WrongKind {
                    kind: spec.kind.name(),
                    expected: "a sensor anomaly",
                })
            }
        }
    }
    Ok(out)
}

fn gaussian(mean: f64, std: f64, rng: &mut Rng) -> f64 {
    Normal::new(mean, std).expect("finite std").sample(rng)
}

/// Returns the parameters in force once a dynamics anomaly is active.
pub fn corrupt_dynamics(spec: &AnomalySpec, params: &EnvParams) -> Result<EnvParams> {
    let mut out = *params;
    match &spec.params {
        AnomalyParams::Gravity { value } => out.gravity = *value,
        AnomalyParams::Components { values } => {
            for &(component, value) in values {
                match (&mut out.body, component) {
                    (Body::CartPole(p), Component::PoleHalfLength) => p.pole_half_length = value,
                    (Body::CartPole(p), Component::PoleMass) => p.pole_mass = value,
                    (Body::Acrobot(p), Component::Link1Length) => p.link1_length = value,
                    (Body::Acrobot(p), Component::Link2Length) => p.link2_length = value,
                    (Body::Acrobot(p), Component::Link1Mass) => p.link1_mass = value,
                    (Body::Acrobot(p), Component::Link2Mass) => p.link2_mass = value,
                    (_, c) => {
                        return Err(Error::InvalidArgument(format!(
                            "component {c:?} does not exist in {}",
                            params.kind()
                        )))
                    }
                }
            }
        }
        _ => {
            return Err(Error::WrongKind {
                kind: spec.kind.name(),
                expected: "a gravity or component anomaly",
            })
        }
    }
    Ok(out)
}

/// Applies wind to the chosen action.
///
/// One uniform draw is consumed per call. With probability `p` the action
/// opposing the wind is weakened: on Acrobot it becomes a no-op and a no-op
/// becomes the wind-aligned torque; on CartPole, which has no no-op, the
/// opposing push is replaced by the wind-aligned push.
pub fn corrupt_action(spec: &AnomalySpec, action: Action, env: EnvKind, rng: &mut Rng) -> Result<Action> {
    let probability = match (spec.kind, &spec.params) {
        (AnomalyKind::WindL2R | AnomalyKind::WindR2L, AnomalyParams::Wind { probability }) => *probability,
        _ => {
            return Err(Error::WrongKind {
                kind: spec.kind.name(),
                expected: "a wind anomaly",
            })
        }
    };
    let draw: f64 = rng.random();
    Ok(apply_wind(spec.kind, action, env, draw < probability))
}

fn apply_wind(kind: AnomalyKind, action: Action, env: EnvKind, gust: bool) -> Action {
    if !gust {
        return action;
    }
    let left_to_right = kind == AnomalyKind::WindL2R;
    match env {
        EnvKind::CartPole => {
            if left_to_right {
                Action::RIGHT
            } else {
                Action::LEFT
            }
        }
        EnvKind::Acrobot => {
            let (aligned, opposing) = if left_to_right {
                (Action::TORQUE_POS, Action::TORQUE_NEG)
            } else {
                (Action::TORQUE_NEG, Action::TORQUE_POS)
            };
            if action == opposing {
                Action::TORQUE_ZERO
            } else if action == Action::TORQUE_ZERO {
                aligned
            } else {
                action
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{default_params, CartPoleParams};

    fn spec_with(kind: AnomalyKind, env: EnvKind, params: AnomalyParams, mask: &[usize]) -> AnomalySpec {
        let mut feature_mask = vec![false; env.obs_dim()];
        for &i in mask {
            feature_mask[i] = true;
        }
        AnomalySpec {
            kind,
            env,
            inject_step: 10,
            feature_mask,
            params,
            rng_seed: 3,
        }
    }

    #[test]
    fn table_values() {
        let cal = sample_spec(AnomalyKind::CalibrationFailure, EnvKind::CartPole, 200, 1).unwrap();
        assert_eq!(cal.params, AnomalyParams::CalibrationFailure { factor: 3.0 });
        let iid = sample_spec(AnomalyKind::IidNoise, EnvKind::CartPole, 200, 1).unwrap();
        assert_eq!(iid.params, AnomalyParams::IidNoise { mean: 1.0, std: 2.0 });
        let iid = sample_spec(AnomalyKind::IidNoise, EnvKind::Acrobot, 200, 1).unwrap();
        assert_eq!(iid.params, AnomalyParams::IidNoise { mean: 2.0, std: 2.0 });
        for seed in 0..50 {
            let g = sample_spec(AnomalyKind::GravityManipulation, EnvKind::Acrobot, 200, seed).unwrap();
            match g.params {
                AnomalyParams::Gravity { value } => assert!((10.0..=11.0).contains(&value)),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn short_horizon_is_rejected() {
        assert!(sample_spec(AnomalyKind::IidNoise, EnvKind::CartPole, 9, 0).is_err());
    }

    #[test]
    fn shutdown_clamps_masked_feature() {
        let spec = spec_with(AnomalyKind::SensorShutdown, EnvKind::CartPole, AnomalyParams::SensorShutdown, &[0]);
        let mut rng = spec.corruption_rng();
        let out = corrupt_observation(&spec, &[0.5, -0.3, 0.1, 0.0], 10, &mut rng).unwrap();
        assert_eq!(out, vec![0.0, -0.3, 0.1, 0.0]);
    }

    #[test]
    fn calibration_multiplies() {
        let spec = spec_with(
            AnomalyKind::CalibrationFailure,
            EnvKind::CartPole,
            AnomalyParams::CalibrationFailure { factor: 3.0 },
            &[2],
        );
        let mut rng = spec.corruption_rng();
        let out = corrupt_observation(&spec, &[0.1, 0.2, 0.5, 0.3], 12, &mut rng).unwrap();
        assert_eq!(out[2], 1.5);
        assert_eq!([out[0], out[1], out[3]], [0.1, 0.2, 0.3]);
    }

    #[test]
    fn drift_is_zero_at_injection() {
        let spec = spec_with(
            AnomalyKind::SensorDrift,
            EnvKind::CartPole,
            AnomalyParams::SensorDrift { rate: 2e-4 },
            &[1],
        );
        let mut rng = spec.corruption_rng();
        let obs = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(corrupt_observation(&spec, &obs, 10, &mut rng).unwrap(), obs.to_vec());
        let later = corrupt_observation(&spec, &obs, 60, &mut rng).unwrap();
        assert_ne!(later[1], 0.2);
    }

    #[test]
    fn identity_before_injection() {
        let obs = [0.1, 0.2, 0.3, 0.4];
        for kind in AnomalyKind::ALL.into_iter().filter(|k| k.is_sensor()) {
            let spec = sample_spec(kind, EnvKind::CartPole, 200, 5).unwrap();
            let mut rng = spec.corruption_rng();
            for t in 0..spec.inject_step {
                assert_eq!(corrupt_observation(&spec, &obs, t, &mut rng).unwrap(), obs.to_vec());
            }
        }
    }

    #[test]
    fn wrong_kind_errors() {
        let wind = sample_spec(AnomalyKind::WindL2R, EnvKind::CartPole, 200, 0).unwrap();
        let mut rng = wind.corruption_rng();
        assert!(matches!(corrupt_observation(&wind, &[0.0; 4], 100, &mut rng), Err(Error::WrongKind { .. })));
        let params = default_params(EnvKind::CartPole);
        assert!(matches!(corrupt_dynamics(&wind, &params), Err(Error::WrongKind { .. })));
        let noise = sample_spec(AnomalyKind::IidNoise, EnvKind::CartPole, 200, 0).unwrap();
        assert!(matches!(
            corrupt_action(&noise, Action::LEFT, EnvKind::CartPole, &mut rng),
            Err(Error::WrongKind { .. })
        ));
    }

    #[test]
    fn gravity_replaces_only_gravity() {
        let spec = spec_with(
            AnomalyKind::GravityManipulation,
            EnvKind::Acrobot,
            AnomalyParams::Gravity { value: 10.3 },
            &[],
        );
        let params = default_params(EnvKind::Acrobot);
        let out = corrupt_dynamics(&spec, &params).unwrap();
        assert_eq!(out.gravity, 10.3);
        assert_eq!(out.body, params.body);
    }

    #[test]
    fn component_isolation() {
        let spec = spec_with(
            AnomalyKind::ComponentManipulation,
            EnvKind::CartPole,
            AnomalyParams::Components {
                values: vec![(Component::PoleHalfLength, 1.0)],
            },
            &[],
        );
        let params = default_params(EnvKind::CartPole);
        let out = corrupt_dynamics(&spec, &params).unwrap();
        let expected = CartPoleParams {
            pole_half_length: 1.0,
            ..CartPoleParams::default()
        };
        assert_eq!(out.body, Body::CartPole(expected));
        assert_eq!(out.gravity, params.gravity);
    }

    #[test]
    fn wind_rules() {
        use AnomalyKind::*;
        let ac = EnvKind::Acrobot;
        assert_eq!(apply_wind(WindL2R, Action::TORQUE_NEG, ac, true), Action::TORQUE_ZERO);
        assert_eq!(apply_wind(WindL2R, Action::TORQUE_ZERO, ac, true), Action::TORQUE_POS);
        assert_eq!(apply_wind(WindL2R, Action::TORQUE_POS, ac, true), Action::TORQUE_POS);
        assert_eq!(apply_wind(WindR2L, Action::TORQUE_POS, ac, true), Action::TORQUE_ZERO);
        assert_eq!(apply_wind(WindR2L, Action::TORQUE_ZERO, ac, true), Action::TORQUE_NEG);
        assert_eq!(apply_wind(WindL2R, Action::LEFT, EnvKind::CartPole, true), Action::RIGHT);
        assert_eq!(apply_wind(WindR2L, Action::RIGHT, EnvKind::CartPole, true), Action::LEFT);
        for a in 0..3 {
            assert_eq!(apply_wind(WindL2R, Action(a), ac, false), Action(a));
        }
    }

    #[test]
    fn wind_frequency_tracks_probability() {
        let spec = sample_spec(AnomalyKind::WindL2R, EnvKind::CartPole, 200, 11).unwrap();
        let mut rng = spec.corruption_rng();
        let n = 20_000;
        let flipped = (0..n)
            .filter(|_| corrupt_action(&spec, Action::LEFT, EnvKind::CartPole, &mut rng).unwrap() == Action::RIGHT)
            .count();
        let rate = flipped as f64 / n as f64;
        assert!((rate - 0.66).abs() < 0.015, "{rate}");
    }

    #[test]
    fn sampled_specs_conform_to_table() {
        for env in EnvKind::ALL {
            for kind in AnomalyKind::ALL {
                for seed in 0..1000 {
                    let spec = sample_spec(kind, env, 200, seed).unwrap();
                    spec.validate(200).unwrap();
                    assert!((20..=180).contains(&spec.inject_step));
                }
            }
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in AnomalyKind::ALL {
            assert_eq!(kind.name().parse::<AnomalyKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
        assert_eq!(AnomalyKind::ALL.iter().filter(|k| k.is_sensor()).count(), 4);
    }
}
