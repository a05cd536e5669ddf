//! Central parameter registry.
//!
//! Every tunable constant used by the planner, the models, and the simulator
//! lives here with its default value. The CLI exposes each entry through
//! repeated `--set key=value` flags; tests and the simulator read the same
//! struct so there is exactly one source of truth.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown parameter `{key}`; run with `--set help` to list valid keys")]
    UnknownKey { key: String },
    #[error("parameter `{key}`: expected a number, got `{value}`")]
    BadValue { key: String, value: String },
    #[error("parameter `{key}`: {reason}")]
    OutOfRange { key: String, reason: String },
}

/// Search-space parameters for the layered speed-graph search.
#[derive(Debug, Clone)]
pub struct SearchParams {
    /// Maximum arc-length gap between consecutive sampled stations (m).
    pub max_gap: f64,
    /// Hard cap on the number of layers per planning cycle.
    pub max_layers: usize,
    /// Time horizon for any node (s).
    pub horizon: f64,
    /// Minimum speed a child node may have (m/s).
    pub min_speed: f64,
    /// Discretized longitudinal acceleration set (m/s^2), sorted ascending.
    pub accels: Vec<f64>,
    /// Weight on squared-acceleration control cost.
    pub w_accel: f64,
    /// Weight on deviation from the local speed limit.
    pub w_speed_dev: f64,
    /// Local-truncation grid resolution in speed (m/s).
    pub res_v: f64,
    /// Local-truncation grid resolution in time (s).
    pub res_t: f64,
    /// Maximum node expansions per search.
    pub max_iter: usize,
    /// When set, the search verifies the one-node-per-cell property on exit.
    pub validate_cells: bool,
}

/// Ego vehicle limits.
#[derive(Debug, Clone, Copy)]
pub struct VehicleParams {
    /// Maximum longitudinal acceleration (m/s^2).
    pub accel_max: f64,
    /// Maximum longitudinal deceleration, negative (m/s^2).
    pub accel_min: f64,
    /// Maximum lateral acceleration used for the curvature speed bound (m/s^2).
    pub lat_accel_max: f64,
    /// Footprint length (m).
    pub length: f64,
    /// Footprint width (m).
    pub width: f64,
}

/// Fail-safe (invariable safe set) parameters.
#[derive(Debug, Clone, Copy)]
pub struct SafetyParams {
    /// Reaction time before braking in the car-following rule (s).
    pub reaction_time: f64,
    /// Required bumper-to-bumper gap at standstill (m).
    pub standstill_gap: f64,
    /// Distance before a gated station at which the vehicle must be able to stop (m).
    pub stop_margin: f64,
    /// Deceleration used for the fallback stop trajectory (m/s^2, negative).
    pub fallback_decel: f64,
}

/// Priority-gate constants of the classifier.
#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    /// Slope of the gate time in ego arrival time.
    pub slope: f64,
    /// Offset of the gate time (s).
    pub offset: f64,
    /// Upper cap of the gate time (s).
    pub cap: f64,
    /// Probability threshold above which the ego may pass a gate.
    pub pass_threshold: f64,
}

/// Trajectory resampling parameters.
#[derive(Debug, Clone, Copy)]
pub struct SmoothParams {
    /// Output sample period (s).
    pub dt: f64,
    /// Jerk limit applied between acceleration plateaus (m/s^3).
    pub jerk_limit: f64,
}

/// Simulator parameters.
#[derive(Debug, Clone, Copy)]
pub struct SimParams {
    /// Physics step (s).
    pub dt: f64,
    /// Replanning period (s).
    pub replan_period: f64,
    /// Field-of-view base range straight ahead (m).
    pub fov_range: f64,
    /// Fraction of the base range kept at rearward bearings.
    pub fov_floor: f64,
    /// Fraction of the lane length used for the observation-point distance.
    pub observation_dist_frac: f64,
}

/// Protection-curve fitting parameters.
#[derive(Debug, Clone, Copy)]
pub struct FitParams {
    /// Gaussian envelope width in standard deviations.
    pub sigma_level: f64,
    /// Bin width over relative speed (m/s).
    pub bin_width_dv: f64,
    /// Bin width over interaction angle (rad).
    pub bin_width_dtheta: f64,
    /// Minimum samples for a bin to contribute to the fit.
    pub min_bin_count: usize,
}

/// Classifier training parameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Params {
    pub search: SearchParams,
    pub vehicle: VehicleParams,
    pub safety: SafetyParams,
    pub gate: GateParams,
    pub smooth: SmoothParams,
    pub sim: SimParams,
    pub fit: FitParams,
    pub train: TrainParams,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            search: SearchParams {
                max_gap: 10.0,
                max_layers: 28,
                horizon: 10.0,
                min_speed: 0.1,
                accels: vec![-3.0, -1.5, -0.5, 0.0, 0.5, 1.0, 1.5],
                w_accel: 0.2,
                w_speed_dev: 1.0,
                res_v: 0.2,
                res_t: 0.2,
                max_iter: 20_000,
                validate_cells: false,
            },
            vehicle: VehicleParams {
                accel_max: 1.5,
                accel_min: -3.0,
                lat_accel_max: 2.0,
                length: 4.5,
                width: 2.0,
            },
            safety: SafetyParams {
                reaction_time: 0.4,
                standstill_gap: 2.0,
                stop_margin: 1.0,
                fallback_decel: -2.5,
            },
            gate: GateParams {
                slope: 0.5,
                offset: 1.5,
                cap: 5.0,
                pass_threshold: 0.95,
            },
            smooth: SmoothParams {
                dt: 0.02,
                jerk_limit: 5.0,
            },
            sim: SimParams {
                dt: 0.02,
                replan_period: 0.1,
                fov_range: 120.0,
                fov_floor: 0.2,
                observation_dist_frac: 0.15,
            },
            fit: FitParams {
                sigma_level: 3.0,
                bin_width_dv: 0.5,
                bin_width_dtheta: std::f64::consts::PI / 18.0,
                min_bin_count: 5,
            },
            train: TrainParams {
                epochs: 160,
                learning_rate: 0.05,
                batch_size: 64,
                momentum: 0.9,
                seed: 42,
            },
        }
    }
}

/// One row of the parameter registry: key, description.
pub const REGISTRY: &[(&str, &str)] = &[
    ("search.max_gap", "max station gap along the path (m)"),
    ("search.max_layers", "cap on search layers per cycle"),
    ("search.horizon", "node time horizon (s)"),
    ("search.min_speed", "minimum child-node speed (m/s)"),
    ("search.w_accel", "control-cost weight"),
    ("search.w_speed_dev", "speed-deviation cost weight"),
    ("search.res_v", "truncation speed resolution (m/s)"),
    ("search.res_t", "truncation time resolution (s)"),
    ("search.max_iter", "max node expansions per search"),
    ("search.validate_cells", "verify one node per truncation cell (0/1)"),
    ("vehicle.accel_max", "max longitudinal acceleration (m/s^2)"),
    ("vehicle.accel_min", "max deceleration, negative (m/s^2)"),
    ("vehicle.lat_accel_max", "lateral acceleration for curvature bound (m/s^2)"),
    ("vehicle.length", "vehicle length (m)"),
    ("vehicle.width", "vehicle width (m)"),
    ("safety.reaction_time", "car-following reaction time (s)"),
    ("safety.standstill_gap", "standstill bumper gap (m)"),
    ("safety.stop_margin", "stop margin before a gated station (m)"),
    ("safety.fallback_decel", "fallback stop deceleration (m/s^2)"),
    ("gate.slope", "priority gate slope"),
    ("gate.offset", "priority gate offset (s)"),
    ("gate.cap", "priority gate cap (s)"),
    ("gate.pass_threshold", "probability needed to pass a gate"),
    ("smooth.dt", "trajectory sample period (s)"),
    ("smooth.jerk_limit", "trajectory jerk limit (m/s^3)"),
    ("sim.dt", "simulation step (s)"),
    ("sim.replan_period", "replanning period (s)"),
    ("sim.fov_range", "field-of-view range straight ahead (m)"),
    ("sim.fov_floor", "field-of-view floor fraction"),
    ("sim.observation_dist_frac", "observation-point distance as lane-length fraction"),
    ("fit.sigma_level", "envelope width in standard deviations"),
    ("fit.bin_width_dv", "fit bin width over relative speed (m/s)"),
    ("fit.bin_width_dtheta", "fit bin width over interaction angle (rad)"),
    ("fit.min_bin_count", "min samples per fit bin"),
    ("train.epochs", "training epochs"),
    ("train.learning_rate", "training learning rate"),
    ("train.batch_size", "training mini-batch size"),
    ("train.momentum", "training momentum"),
    ("train.seed", "training shuffle/init seed"),
];

impl Params {
    /// Applies one `key=value` override. Keys are listed in [`REGISTRY`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let num = |v: &str| -> Result<f64, ConfigError> {
            v.parse::<f64>().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
            })
        };
        let count = |v: &str| -> Result<usize, ConfigError> {
            v.parse::<usize>().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
            })
        };
        let positive = |key: &str, x: f64| -> Result<f64, ConfigError> {
            if x > 0.0 {
                Ok(x)
            } else {
                Err(ConfigError::OutOfRange {
                    key: key.to_string(),
                    reason: "must be positive".to_string(),
                })
            }
        };
        match key {
            "search.max_gap" => self.search.max_gap = positive(key, num(value)?)?,
            "search.max_layers" => self.search.max_layers = count(value)?,
            "search.horizon" => self.search.horizon = positive(key, num(value)?)?,
            "search.min_speed" => self.search.min_speed = positive(key, num(value)?)?,
            "search.w_accel" => self.search.w_accel = num(value)?,
            "search.w_speed_dev" => self.search.w_speed_dev = num(value)?,
            "search.res_v" => self.search.res_v = positive(key, num(value)?)?,
            "search.res_t" => self.search.res_t = positive(key, num(value)?)?,
            "search.max_iter" => self.search.max_iter = count(value)?,
            "search.validate_cells" => self.search.validate_cells = num(value)? != 0.0,
            "vehicle.accel_max" => self.vehicle.accel_max = positive(key, num(value)?)?,
            "vehicle.accel_min" => {
                let x = num(value)?;
                if x >= 0.0 {
                    return Err(ConfigError::OutOfRange {
                        key: key.to_string(),
                        reason: "must be negative".to_string(),
                    });
                }
                self.vehicle.accel_min = x;
            }
            "vehicle.lat_accel_max" => self.vehicle.lat_accel_max = positive(key, num(value)?)?,
            "vehicle.length" => self.vehicle.length = positive(key, num(value)?)?,
            "vehicle.width" => self.vehicle.width = positive(key, num(value)?)?,
            "safety.reaction_time" => self.safety.reaction_time = num(value)?,
            "safety.standstill_gap" => self.safety.standstill_gap = num(value)?,
            "safety.stop_margin" => self.safety.stop_margin = num(value)?,
            "safety.fallback_decel" => self.safety.fallback_decel = num(value)?,
            "gate.slope" => self.gate.slope = positive(key, num(value)?)?,
            "gate.offset" => self.gate.offset = num(value)?,
            "gate.cap" => self.gate.cap = num(value)?,
            "gate.pass_threshold" => {
                let x = num(value)?;
                if !(0.0 < x && x < 1.0) {
                    return Err(ConfigError::OutOfRange {
                        key: key.to_string(),
                        reason: "must be in (0, 1)".to_string(),
                    });
                }
                self.gate.pass_threshold = x;
            }
            "smooth.dt" => self.smooth.dt = positive(key, num(value)?)?,
            "smooth.jerk_limit" => self.smooth.jerk_limit = positive(key, num(value)?)?,
            "sim.dt" => self.sim.dt = positive(key, num(value)?)?,
            "sim.replan_period" => self.sim.replan_period = positive(key, num(value)?)?,
            "sim.fov_range" => self.sim.fov_range = positive(key, num(value)?)?,
            "sim.fov_floor" => self.sim.fov_floor = num(value)?,
            "sim.observation_dist_frac" => {
                self.sim.observation_dist_frac = positive(key, num(value)?)?
            }
            "fit.sigma_level" => self.fit.sigma_level = num(value)?,
            "fit.bin_width_dv" => self.fit.bin_width_dv = positive(key, num(value)?)?,
            "fit.bin_width_dtheta" => self.fit.bin_width_dtheta = positive(key, num(value)?)?,
            "fit.min_bin_count" => self.fit.min_bin_count = count(value)?,
            "train.epochs" => self.train.epochs = count(value)?,
            "train.learning_rate" => self.train.learning_rate = positive(key, num(value)?)?,
            "train.batch_size" => self.train.batch_size = count(value)?,
            "train.momentum" => self.train.momentum = num(value)?,
            "train.seed" => self.train.seed = count(value)? as u64,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Effective configuration as sorted `key=value` lines. Printed at the
    /// start of every CLI run so any result can be reproduced from its log.
    pub fn echo(&self) -> Vec<String> {
        let accels = self
            .search
            .accels
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut lines = vec![
            format!("fit.bin_width_dtheta={}", self.fit.bin_width_dtheta),
            format!("fit.bin_width_dv={}", self.fit.bin_width_dv),
            format!("fit.min_bin_count={}", self.fit.min_bin_count),
            format!("fit.sigma_level={}", self.fit.sigma_level),
            format!("gate.cap={}", self.gate.cap),
            format!("gate.offset={}", self.gate.offset),
            format!("gate.pass_threshold={}", self.gate.pass_threshold),
            format!("gate.slope={}", self.gate.slope),
            format!("safety.fallback_decel={}", self.safety.fallback_decel),
            format!("safety.reaction_time={}", self.safety.reaction_time),
            format!("safety.standstill_gap={}", self.safety.standstill_gap),
            format!("safety.stop_margin={}", self.safety.stop_margin),
            format!("search.accels={accels}"),
            format!("search.horizon={}", self.search.horizon),
            format!("search.max_gap={}", self.search.max_gap),
            format!("search.max_iter={}", self.search.max_iter),
            format!("search.max_layers={}", self.search.max_layers),
            format!("search.min_speed={}", self.search.min_speed),
            format!("search.res_t={}", self.search.res_t),
            format!("search.res_v={}", self.search.res_v),
            format!("search.validate_cells={}", self.search.validate_cells),
            format!("search.w_accel={}", self.search.w_accel),
            format!("search.w_speed_dev={}", self.search.w_speed_dev),
            format!("sim.dt={}", self.sim.dt),
            format!("sim.fov_floor={}", self.sim.fov_floor),
            format!("sim.fov_range={}", self.sim.fov_range),
            format!("sim.observation_dist_frac={}", self.sim.observation_dist_frac),
            format!("sim.replan_period={}", self.sim.replan_period),
            format!("smooth.dt={}", self.smooth.dt),
            format!("smooth.jerk_limit={}", self.smooth.jerk_limit),
            format!("train.batch_size={}", self.train.batch_size),
            format!("train.epochs={}", self.train.epochs),
            format!("train.learning_rate={}", self.train.learning_rate),
            format!("train.momentum={}", self.train.momentum),
            format!("train.seed={}", self.train.seed),
            format!("vehicle.accel_max={}", self.vehicle.accel_max),
            format!("vehicle.accel_min={}", self.vehicle.accel_min),
            format!("vehicle.lat_accel_max={}", self.vehicle.lat_accel_max),
            format!("vehicle.length={}", self.vehicle.length),
            format!("vehicle.width={}", self.vehicle.width),
        ];
        lines.sort();
        lines
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_registry_key_is_settable() {
        for (key, _) in REGISTRY {
            let mut p = Params::default();
            let value = match *key {
                "vehicle.accel_min" | "safety.fallback_decel" => "-2.0",
                "gate.pass_threshold" => "0.5",
                _ => "1",
            };
            p.set(key, value)
                .unwrap_or_else(|e| panic!("setting {key}: {e}"));
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_hint() {
        let mut p = Params::default();
        let err = p.set("search.bogus", "1").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
    }

    #[test]
    fn echo_is_sorted_and_covers_registry() {
        let p = Params::default();
        let lines = p.echo();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        for (key, _) in REGISTRY {
            assert!(
                lines.iter().any(|l| l.starts_with(&format!("{key}="))),
                "echo missing {key}"
            );
        }
    }

    #[test]
    fn overrides_round_trip_through_echo() {
        let mut p = Params::default();
        p.set("search.res_v", "0.05").unwrap();
        assert!(p.echo().contains(&"search.res_v=0.05".to_string()));
    }
}
