//! Speed planning along a fixed path through unsignalized, partially
//! occluded traffic, plus the closed-loop simulation harness used to
//! exercise it.
//!
//! The crate is organized along the planning pipeline:
//!
//! - [`path`]: path geometry, interaction points, curvature/occlusion bounds
//! - [`ipm`]: protection times, arrival windows, the priority classifier
//! - [`stgraph`]: layered station-speed-time graph search
//! - [`planner`]: priority determination, fail-safe sets, resampling
//! - [`sim`]: scripted-traffic simulator, metrics, synthetic data generation
//! - [`config`]: the single registry of every tunable constant

pub mod config;
pub mod ipm;
pub mod stgraph;
pub mod path;
pub mod planner;
pub mod sim;
