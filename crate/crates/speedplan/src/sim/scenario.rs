//! Scenario files: TOML descriptions of the map, the ego vehicle, scripted
//! agents and occluded conflict areas, resolved at load into runtime form.

use crate::config::Params;
use crate::path::{
    curvature_speed_limit, find_interaction_points, observation_station_for_distance,
    InteractionPoint, PathProfile,
};
use serde::Deserialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("scenario `{name}`: {message}")]
    Invalid { name: String, message: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    duration: f64,
    #[serde(default)]
    goal_s: Option<f64>,
    ego: EgoFile,
    #[serde(default)]
    agents: Vec<AgentFile>,
    #[serde(default)]
    occlusions: Vec<OcclusionFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EgoFile {
    path: Vec<(f64, f64)>,
    #[serde(default)]
    start_s: f64,
    start_v: f64,
    speed_limit: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    name: String,
    path: Vec<(f64, f64)>,
    #[serde(default)]
    start_s: f64,
    start_v: f64,
    #[serde(default)]
    speed_limit: Option<f64>,
    /// (min, max) longitudinal acceleration; defaults to the ego limits.
    #[serde(default)]
    accel: Option<(f64, f64)>,
    #[serde(default)]
    start_s_jitter: f64,
    #[serde(default)]
    start_v_jitter: f64,
    #[serde(default)]
    behavior: BehaviorFile,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BehaviorFile {
    Constant,
    /// Stepwise speed targets: at each `[time, speed]` entry the agent starts
    /// ramping toward that speed within its acceleration bounds.
    Schedule { points: Vec<(f64, f64)> },
    /// Simple car follower tracking `target_v`, yielding to whoever is ahead
    /// on its own path.
    Follow { target_v: f64 },
}

impl Default for BehaviorFile {
    fn default() -> Self {
        BehaviorFile::Constant
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OcclusionFile {
    /// Ego station of the conflict whose approach is occluded.
    conflict_s: f64,
    /// Lane length of the crossing road; the observation distance is the
    /// configured fraction of it.
    #[serde(default)]
    lane_length: Option<f64>,
    /// Explicit observation station, overriding the lane-length heuristic.
    #[serde(default)]
    observation_s: Option<f64>,
    /// Assumed crossing angle of whatever may emerge (rad).
    #[serde(default)]
    cross_angle: Option<f64>,
    /// Agents hidden until the ego reaches the observation station.
    #[serde(default)]
    hides: Vec<String>,
}

/// Runtime agent behavior.
#[derive(Debug, Clone)]
pub enum Behavior {
    Constant,
    Schedule { points: Vec<(f64, f64)> },
    Follow { target_v: f64 },
}

#[derive(Debug, Clone)]
pub struct AgentSetup {
    pub name: String,
    pub path: PathProfile,
    pub start_s: f64,
    pub start_v: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub start_s_jitter: f64,
    pub start_v_jitter: f64,
    pub behavior: Behavior,
}

/// An occluded conflict area on the ego path.
#[derive(Debug, Clone)]
pub struct OcclusionZone {
    pub conflict_s: f64,
    pub observation_s: f64,
    /// Straight-line distance from the observation point to the conflict.
    pub distance: f64,
    pub cross_angle: f64,
    /// Agent indices hidden while the ego is before the observation point.
    pub hides: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub goal_s: f64,
    pub ego_path: PathProfile,
    pub ego_start_s: f64,
    pub ego_start_v: f64,
    pub agents: Vec<AgentSetup>,
    pub occlusions: Vec<OcclusionZone>,
    /// Interaction points between the ego path and each agent's path,
    /// computed once at load (paths are fixed).
    pub interactions: Vec<Vec<InteractionPoint>>,
}

impl Scenario {
    pub fn from_file(path: &Path, params: &Params) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string(), params)
    }

    pub fn from_toml(text: &str, origin: &str, params: &Params) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        Self::resolve(file, params)
    }

    fn resolve(file: ScenarioFile, params: &Params) -> Result<Self, ScenarioError> {
        let fail = |message: String| ScenarioError::Invalid {
            name: file.name.clone(),
            message,
        };
        if file.duration <= 0.0 {
            return Err(fail("duration must be positive".into()));
        }

        let mut ego_path = PathProfile::from_waypoints(&file.ego.path, file.ego.speed_limit)
            .map_err(|e| fail(format!("ego path: {e}")))?;
        let curvature_bounds = curvature_speed_limit(&ego_path, params.vehicle.lat_accel_max);
        ego_path.tighten_speed_limit(&curvature_bounds);

        if file.ego.start_s < 0.0 || file.ego.start_s >= ego_path.length() {
            return Err(fail(format!(
                "ego start_s {} outside the path [0, {})",
                file.ego.start_s,
                ego_path.length()
            )));
        }
        let goal_s = file.goal_s.unwrap_or_else(|| ego_path.length());
        if goal_s <= file.ego.start_s || goal_s > ego_path.length() + 1e-9 {
            return Err(fail(format!("goal_s {goal_s} outside the drivable range")));
        }

        let mut agents = Vec::with_capacity(file.agents.len());
        for a in &file.agents {
            let limit = a.speed_limit.unwrap_or(file.ego.speed_limit);
            let path = PathProfile::from_waypoints(&a.path, limit)
                .map_err(|e| fail(format!("agent `{}` path: {e}", a.name)))?;
            let (accel_min, accel_max) = a
                .accel
                .unwrap_or((params.vehicle.accel_min, params.vehicle.accel_max));
            if accel_min >= 0.0 || accel_max <= 0.0 {
                return Err(fail(format!(
                    "agent `{}`: acceleration bounds must satisfy min < 0 < max",
                    a.name
                )));
            }
            if a.start_s < 0.0 || a.start_s >= path.length() {
                return Err(fail(format!("agent `{}`: start_s outside its path", a.name)));
            }
            let behavior = match &a.behavior {
                BehaviorFile::Constant => Behavior::Constant,
                BehaviorFile::Follow { target_v } => Behavior::Follow { target_v: *target_v },
                BehaviorFile::Schedule { points } => {
                    if points.is_empty() {
                        return Err(fail(format!("agent `{}`: empty schedule", a.name)));
                    }
                    // Declared speed steps must be reachable within the
                    // acceleration bounds: agents never exceed their limits.
                    let mut prev = (0.0, a.start_v);
                    for &(t, v) in points {
                        if t < prev.0 {
                            return Err(fail(format!(
                                "agent `{}`: schedule times must be non-decreasing",
                                a.name
                            )));
                        }
                        let dv = v - prev.1;
                        let dt = (t - prev.0).max(1e-9);
                        let needed = dv / dt;
                        if needed > accel_max + 1e-9 || needed < accel_min - 1e-9 {
                            return Err(fail(format!(
                                "agent `{}`: schedule step at t={t} needs {needed:.2} m/s^2, \
                                 outside [{accel_min}, {accel_max}]",
                                a.name
                            )));
                        }
                        prev = (t, v);
                    }
                    Behavior::Schedule {
                        points: points.clone(),
                    }
                }
            };
            agents.push(AgentSetup {
                name: a.name.clone(),
                path,
                start_s: a.start_s,
                start_v: a.start_v,
                accel_min,
                accel_max,
                start_s_jitter: a.start_s_jitter,
                start_v_jitter: a.start_v_jitter,
                behavior,
            });
        }

        // Interaction geometry between the ego path and every agent path.
        let overlap_radius = params.vehicle.width + 0.5;
        let mut interactions: Vec<Vec<InteractionPoint>> = agents
            .iter()
            .enumerate()
            .map(|(i, a)| find_interaction_points(&ego_path, &a.path, i, overlap_radius))
            .collect();

        let mut occlusions = Vec::with_capacity(file.occlusions.len());
        for zone in &file.occlusions {
            let distance = match (zone.observation_s, zone.lane_length) {
                (Some(obs), _) => {
                    let o = ego_path.sample(obs);
                    let c = ego_path.sample(zone.conflict_s);
                    ((o.x - c.x).powi(2) + (o.y - c.y).powi(2)).sqrt()
                }
                (None, Some(lane)) => params.sim.observation_dist_frac * lane,
                (None, None) => {
                    return Err(fail(
                        "occlusion needs either observation_s or lane_length".into(),
                    ))
                }
            };
            let observation_s = zone.observation_s.unwrap_or_else(|| {
                observation_station_for_distance(&ego_path, zone.conflict_s, distance)
            });
            if observation_s >= zone.conflict_s {
                return Err(fail(format!(
                    "occlusion at {}: observation point must lie before the conflict",
                    zone.conflict_s
                )));
            }
            let mut hides = Vec::new();
            for name in &zone.hides {
                let idx = agents
                    .iter()
                    .position(|a| &a.name == name)
                    .ok_or_else(|| fail(format!("occlusion hides unknown agent `{name}`")))?;
                hides.push(idx);
            }
            // Conflicts inside the zone inherit its observation point.
            for points in &mut interactions {
                for ip in points {
                    if (ip.ego_s - zone.conflict_s).abs() < 3.0 && observation_s < ip.ego_s {
                        ip.observation_s = Some(observation_s);
                    }
                }
            }
            occlusions.push(OcclusionZone {
                conflict_s: zone.conflict_s,
                observation_s,
                distance,
                cross_angle: zone.cross_angle.unwrap_or(std::f64::consts::FRAC_PI_2),
                hides,
            });
        }

        Ok(Scenario {
            name: file.name,
            duration: file.duration,
            goal_s,
            ego_path,
            ego_start_s: file.ego.start_s,
            ego_start_v: file.ego.start_v,
            agents,
            occlusions,
            interactions,
        })
    }
}
