//! Priority determination and fail-safe trajectory generation.
//!
//! The searched best profile is walked gate by gate. Wherever the ego's
//! priority against a competing agent is too low, the planner backtracks into
//! the node list, keeps only states from which a safe stop (or a rule-safe
//! following distance) remains possible, re-expands one step under that
//! constraint, and repeats until the profile passes everywhere or degenerates
//! into a stop. The accepted profile is resampled with bounded jerk.

use crate::config::Params;
use crate::ipm::{
    arrival_bounds, priority_features, ArrivalBounds, PriorityClassifier, ProtectionTimeModel,
};
use crate::path::{InteractionPoint, OverlapKind, PathProfile};
use crate::stgraph::{
    expand_kinematics, node_cost, search, select_path_points, GraphNode, SearchError,
    SearchResult, SearchSpace,
};
use std::fmt::Write as _;
use thiserror::Error;

/// Tolerance for matching a profile node to a gate station (m). Stations are
/// deduplicated within 0.1 m, so this must be slightly wider.
const GATE_MATCH_TOL: f64 = 0.15;

/// How far past its own conflict station an agent must be (center travel, m)
/// before a crossing gate is considered cleared.
fn conflict_clear_distance(params: &Params) -> f64 {
    params.vehicle.length
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("profile node times must strictly increase")]
    NonMonotoneProfile,
}

/// Which decision rule gates the ego at interaction points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerVariant {
    /// Full classifier with the conservatism gate.
    Ipm,
    /// Pass only when the overtake ability is strictly negative.
    MMinus,
    /// Pass when the constant-velocity gap estimate is negative.
    ConstVel,
    /// Diagnostic variant that never yields; proves the collision detector.
    NeverYield,
}

impl PlannerVariant {
    pub fn name(self) -> &'static str {
        match self {
            PlannerVariant::Ipm => "pd-ipm",
            PlannerVariant::MMinus => "pd-mminus",
            PlannerVariant::ConstVel => "pd-cvel",
            PlannerVariant::NeverYield => "never-yield",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "pd-ipm" => Some(PlannerVariant::Ipm),
            "pd-mminus" => Some(PlannerVariant::MMinus),
            "pd-cvel" => Some(PlannerVariant::ConstVel),
            "never-yield" => Some(PlannerVariant::NeverYield),
            _ => None,
        }
    }
}

/// One observed agent, as the planner sees it for a cycle.
#[derive(Debug, Clone)]
pub struct AgentObs<'a> {
    pub path: &'a PathProfile,
    /// Station on its own path.
    pub s: f64,
    pub speed: f64,
    pub accel_max: f64,
    pub accel_min: f64,
}

/// A speed bound that applies while a conflict area is still occluded:
/// stations at or before `observation_s` may not exceed `speed_bound`.
#[derive(Debug, Clone, Copy)]
pub struct ObservationConstraint {
    pub observation_s: f64,
    pub speed_bound: f64,
}

/// Everything one planning cycle works from. Built fresh per cycle from the
/// simulator's (or any caller's) current observations; immutable during it.
pub struct PlanningContext<'a> {
    pub path: &'a PathProfile,
    pub ego_s: f64,
    pub ego_v: f64,
    /// Agents currently visible. Interaction points index into this list.
    pub agents: Vec<AgentObs<'a>>,
    pub interaction_points: Vec<InteractionPoint>,
    pub observation_constraints: Vec<ObservationConstraint>,
    pub protection: &'a ProtectionTimeModel,
    pub classifier: &'a PriorityClassifier,
    pub variant: PlannerVariant,
    pub params: &'a Params,
}

/// One competing agent at a gate.
#[derive(Debug, Clone, Copy)]
pub struct GateEntry {
    pub agent: usize,
    pub angle: f64,
    /// Remaining distance along the agent's own path to the conflict (m).
    pub agent_distance: f64,
    pub kind: OverlapKind,
}

/// A gated station with everyone competing for it.
#[derive(Debug, Clone)]
pub struct PriorityGate {
    pub station: f64,
    pub entries: Vec<GateEntry>,
}

/// A vehicle ahead on the ego path that must be followed at a safe distance.
#[derive(Debug, Clone, Copy)]
pub struct FollowConstraint {
    pub agent: usize,
    /// Lead center station projected onto the ego path (m).
    pub lead_s: f64,
    pub lead_v: f64,
    /// Lead braking capability, positive magnitude (m/s^2).
    pub lead_brake: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Gates {
    pub priority: Vec<PriorityGate>,
    pub follows: Vec<FollowConstraint>,
}

/// Classifies the cycle's interaction points into priority gates and
/// car-following constraints, dropping conflicts that are already resolved.
pub fn derive_gates(ctx: &PlanningContext) -> Gates {
    let clear = conflict_clear_distance(ctx.params);
    let mut entries: Vec<(f64, GateEntry)> = Vec::new();
    let mut follows: Vec<FollowConstraint> = Vec::new();

    for ip in &ctx.interaction_points {
        let agent = &ctx.agents[ip.agent];
        if ip.ego_s <= ctx.ego_s + 0.3 {
            continue; // ego is at or past the conflict entrance
        }
        match ip.kind {
            OverlapKind::Point => {
                if agent.s > ip.agent_s + clear {
                    continue; // the agent has cleared the crossing
                }
                entries.push((
                    ip.ego_s,
                    GateEntry {
                        agent: ip.agent,
                        angle: ip.interaction_angle,
                        agent_distance: (ip.agent_s - agent.s).max(0.0),
                        kind: ip.kind,
                    },
                ));
            }
            OverlapKind::LineEntry => {
                if agent.s < ip.agent_s - 0.3 {
                    // Still approaching its merge: compete for the entry.
                    entries.push((
                        ip.ego_s,
                        GateEntry {
                            agent: ip.agent,
                            angle: ip.interaction_angle,
                            agent_distance: ip.agent_s - agent.s,
                            kind: ip.kind,
                        },
                    ));
                } else {
                    // Already on the shared stretch: a moving constraint.
                    let ap = agent.path.sample(agent.s);
                    let (lead_s, lateral) = ctx.path.project(ap.x, ap.y);
                    if lead_s > ctx.ego_s && lateral < 2.5 {
                        follows.push(FollowConstraint {
                            agent: ip.agent,
                            lead_s,
                            lead_v: agent.speed,
                            lead_brake: agent.accel_min.abs(),
                        });
                    }
                }
            }
        }
    }

    // Group entries into gates by station.
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut priority: Vec<PriorityGate> = Vec::new();
    for (station, entry) in entries {
        match priority.last_mut() {
            Some(gate) if (gate.station - station).abs() <= GATE_MATCH_TOL => {
                gate.entries.push(entry)
            }
            _ => priority.push(PriorityGate {
                station,
                entries: vec![entry],
            }),
        }
    }

    // Keep only the nearest lead per agent.
    follows.sort_by(|a, b| {
        a.agent
            .cmp(&b.agent)
            .then(a.lead_s.partial_cmp(&b.lead_s).unwrap())
    });
    follows.dedup_by_key(|f| f.agent);

    Gates { priority, follows }
}

/// Pass-first probability against one competitor, evaluated at a profile
/// node. Relative speed is taken as zero: predicting passing speeds for the
/// other agent is not attempted.
pub fn agent_priority_probability(ctx: &PlanningContext, node: &GraphNode, entry: &GateEntry) -> f64 {
    let agent = &ctx.agents[entry.agent];
    let protection = ctx.protection.protection_times(0.0, entry.angle);
    let agent_bounds = arrival_bounds(
        agent.speed,
        entry.agent_distance.max(0.0),
        agent.accel_max,
        agent.accel_min,
    )
    .expect("gate entries carry validated kinematics");
    // Best-case ego arrival is the node's own time; worst case comes from
    // the constant-acceleration model over the remaining distance.
    let ego_latest = arrival_bounds(
        ctx.ego_v,
        (node.s - ctx.ego_s).max(0.0),
        ctx.params.vehicle.accel_max,
        ctx.params.vehicle.accel_min,
    )
    .expect("ego kinematics are valid")
    .latest;
    let features = priority_features(
        ArrivalBounds {
            earliest: node.t,
            latest: ego_latest,
        },
        agent_bounds,
        protection,
    );
    ctx.classifier.priority_probability(features, node.t.max(0.0))
}

fn overtake_ability(ctx: &PlanningContext, node: &GraphNode, entry: &GateEntry) -> f64 {
    let agent = &ctx.agents[entry.agent];
    let protection = ctx.protection.protection_times(0.0, entry.angle);
    let agent_bounds = arrival_bounds(
        agent.speed,
        entry.agent_distance.max(0.0),
        agent.accel_max,
        agent.accel_min,
    )
    .expect("gate entries carry validated kinematics");
    node.t - agent_bounds.earliest + protection.overtake.abs()
}

/// Constant-velocity gap estimate: ego time-to-point minus agent
/// time-to-point at frozen speeds. A stopped agent never arrives (gap is
/// minus infinity); a stopped ego never overtakes.
fn const_vel_gap(ctx: &PlanningContext, gate_station: f64, entry: &GateEntry) -> f64 {
    let agent = &ctx.agents[entry.agent];
    if ctx.ego_v <= 1e-6 {
        return f64::INFINITY;
    }
    if agent.speed <= 1e-6 {
        return f64::NEG_INFINITY;
    }
    (gate_station - ctx.ego_s).max(0.0) / ctx.ego_v - entry.agent_distance / agent.speed
}

/// Whether the ego's priority at this gate is too low to pass, for the
/// context's planner variant. True as soon as any single competitor wins.
pub fn priority_is_low(ctx: &PlanningContext, node: &GraphNode, gate: &PriorityGate) -> bool {
    gate.entries.iter().any(|entry| match ctx.variant {
        PlannerVariant::Ipm => {
            agent_priority_probability(ctx, node, entry) < ctx.classifier.pass_threshold
        }
        PlannerVariant::MMinus => overtake_ability(ctx, node, entry) >= 0.0,
        PlannerVariant::ConstVel => const_vel_gap(ctx, gate.station, entry) >= 0.0,
        PlannerVariant::NeverYield => false,
    })
}

/// What a backtracked node must stay safe against.
#[derive(Debug, Clone, Copy)]
pub enum SafeGate {
    /// Be able to stop at least `stop_margin` before this station.
    Stop { station: f64 },
    /// Keep the longitudinal safety rule against a lead vehicle.
    Follow(FollowConstraint),
}

/// Membership in the invariable safe set for one gate.
///
/// Stop gates: from (s, v) the ego can brake to standstill at least
/// `stop_margin` before the station; a standing ego anywhere before the
/// station is safe. Follow gates: the rule gap
/// `v*t_react + v^2/(2|a_min|) - v_lead^2/(2*b_lead) + standstill` fits into
/// the bumper-to-bumper distance.
pub fn in_invariable_safe_set(ctx: &PlanningContext, node: &GraphNode, gate: &SafeGate) -> bool {
    let braking = ctx.params.vehicle.accel_min.abs();
    match *gate {
        SafeGate::Stop { station } => {
            if node.v <= 1e-9 {
                return node.s < station;
            }
            let gap = station - node.s;
            node.v * node.v / (2.0 * braking) <= gap - ctx.params.safety.stop_margin
        }
        SafeGate::Follow(fc) => {
            let bumper_gap = (fc.lead_s - node.s) - ctx.params.vehicle.length;
            let needed = node.v * ctx.params.safety.reaction_time
                + node.v * node.v / (2.0 * braking)
                - fc.lead_v * fc.lead_v / (2.0 * fc.lead_brake)
                + ctx.params.safety.standstill_gap;
            bumper_gap >= needed
        }
    }
}

/// Stop target implied by a safe gate: where the ego should come to rest.
fn stop_target(ctx: &PlanningContext, gate: &SafeGate) -> f64 {
    match *gate {
        SafeGate::Stop { station } => station - ctx.params.safety.stop_margin,
        SafeGate::Follow(fc) => {
            fc.lead_s - ctx.params.vehicle.length - ctx.params.safety.standstill_gap
        }
    }
}

/// First profile node violating a priority gate or a follow constraint.
fn first_violation(
    ctx: &PlanningContext,
    gates: &Gates,
    profile: &[GraphNode],
) -> Option<(usize, SafeGate)> {
    for (i, node) in profile.iter().enumerate().skip(1) {
        for gate in &gates.priority {
            if (gate.station - node.s).abs() <= GATE_MATCH_TOL && priority_is_low(ctx, node, gate) {
                return Some((i, SafeGate::Stop {
                    station: gate.station,
                }));
            }
        }
        for fc in &gates.follows {
            let gate = SafeGate::Follow(*fc);
            if !in_invariable_safe_set(ctx, node, &gate) {
                return Some((i, gate));
            }
        }
    }
    None
}

/// Backtracks below the violated layer and re-expands one step under the
/// safe-set constraint. Children bypass the minimum-speed pruning through an
/// extra exact-stop action (brake so standstill lands on the stop target).
fn check_and_expand(
    ctx: &PlanningContext,
    space: &SearchSpace,
    result: &SearchResult,
    violated_layer: usize,
    gate: &SafeGate,
) -> Option<Vec<GraphNode>> {
    for layer in (0..violated_layer).rev() {
        let mut best: Option<(f64, f64, usize, GraphNode)> = None;
        for &parent_id in &result.layers[layer] {
            let parent = result.nodes[parent_id];
            if !in_invariable_safe_set(ctx, &parent, gate) {
                continue;
            }
            let next = parent.layer + 1;
            if next >= space.layers() {
                continue;
            }
            let ds = space.stations[next] - parent.s;

            let mut candidates: Vec<f64> = space.accels.clone();
            // Exact-stop action: constant deceleration to rest at the target.
            let target = stop_target(ctx, gate);
            let rem = target - parent.s;
            if parent.v > 1e-6 && rem > 0.05 {
                let a_stop = -parent.v * parent.v / (2.0 * rem);
                if a_stop >= ctx.params.vehicle.accel_min - 1e-9 && a_stop < -1e-6 {
                    candidates.push(a_stop);
                }
            }

            for a in candidates {
                let Some((v_c, t_c)) = expand_kinematics(parent.v, parent.t, ds, a) else {
                    continue;
                };
                // The usual bounds except the minimum speed: recovery may go
                // arbitrarily slow.
                if v_c < space.v_lower[next] || v_c > space.v_upper[next] || t_c > space.horizon {
                    continue;
                }
                let child = GraphNode {
                    layer: next,
                    s: space.stations[next],
                    v: v_c,
                    t: t_c,
                    cost: node_cost(
                        parent.cost,
                        a,
                        t_c - parent.t,
                        v_c,
                        space.v_upper[next],
                        space.w_accel,
                        space.w_speed_dev,
                    ),
                    parent: Some(parent_id),
                };
                if !in_invariable_safe_set(ctx, &child, gate) {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((cost, t, _, _)) => {
                        child.cost < *cost || (child.cost == *cost && child.t < *t)
                    }
                };
                if better {
                    best = Some((child.cost, child.t, parent_id, child));
                }
            }
        }
        if let Some((_, _, parent_id, child)) = best {
            let mut profile: Vec<GraphNode> = result
                .path_to(parent_id)
                .into_iter()
                .map(|i| result.nodes[i])
                .collect();
            profile.push(child);
            return Some(profile);
        }
    }
    None
}

/// A violation found while re-checking an accepted profile; exposed for
/// tests asserting the planner's fixed-point property.
pub fn check_profile(ctx: &PlanningContext, gates: &Gates, profile: &[GraphNode]) -> Option<usize> {
    first_violation(ctx, gates, profile).map(|(i, _)| i)
}

/// Planner provenance stored alongside the trajectory samples.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub profile_cost: f64,
    pub profile_len: usize,
    pub gated_stations: Vec<f64>,
    pub fallback: bool,
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub a: f64,
}

/// The executable output of one planning cycle: uniformly sampled, jerk
/// bounded, integral-consistent.
#[derive(Debug, Clone)]
pub struct PlannedTrajectory {
    pub dt: f64,
    pub samples: Vec<TrajectorySample>,
    pub provenance: Provenance,
}

impl PlannedTrajectory {
    /// State at plan-relative time `t`; holds the final state beyond the end.
    pub fn state_at(&self, t: f64) -> TrajectorySample {
        let last = *self.samples.last().expect("trajectories are non-empty");
        if t <= self.samples[0].t {
            return self.samples[0];
        }
        let idx = ((t - self.samples[0].t) / self.dt).floor() as usize;
        if idx + 1 >= self.samples.len() {
            // Beyond the plan: coast at the final speed.
            let dt_over = t - last.t;
            return TrajectorySample {
                t,
                s: last.s + last.v * dt_over,
                v: last.v,
                a: 0.0,
            };
        }
        let a = self.samples[idx];
        let f = t - a.t;
        TrajectorySample {
            t,
            s: a.s + a.v * f + 0.5 * a.a * f * f,
            v: a.v + a.a * f,
            a: a.a,
        }
    }

    /// CSV export: provenance as `#` comments, then `t,s,v,a` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        let _ = writeln!(out, "# profile_cost={}", p.profile_cost);
        let _ = writeln!(out, "# profile_len={}", p.profile_len);
        let _ = writeln!(
            out,
            "# gated_stations={}",
            p.gated_stations
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(";")
        );
        let _ = writeln!(out, "# fallback={}", p.fallback);
        let _ = writeln!(out, "# rounds={}", p.rounds);
        let _ = writeln!(out, "t,s,v,a");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{},{}", s.t, s.s, s.v, s.a);
        }
        out
    }
}

/// Feedback gains of the resampling tracker (position, speed).
const TRACK_GAIN_S: f64 = 4.0;
const TRACK_GAIN_V: f64 = 4.0;

/// Resamples a node profile at a fixed period with jerk-limited acceleration.
///
/// Between nodes the reference is the exact constant-acceleration motion; a
/// rate-limited tracker follows it, so acceleration plateaus are connected by
/// `|da|/jerk_limit` ramps while positions at node times stay within
/// centimeters. With `stop_to` set, the trajectory continues past the final
/// node braking to standstill at that station and never overshoots it.
/// Landing allowance before a stop target (m): the resampled stop aims this
/// far short so tracking transients cannot creep past the target.
const STOP_LANDING_ALLOWANCE: f64 = 0.2;

pub fn smooth(
    profile: &[GraphNode],
    params: &Params,
    stop_to: Option<f64>,
    provenance: Provenance,
) -> Result<PlannedTrajectory, PlanError> {
    assert!(!profile.is_empty());
    if profile.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(PlanError::NonMonotoneProfile);
    }
    let dt = params.smooth.dt;
    let jerk = params.smooth.jerk_limit;
    let (a_min, a_max) = (params.vehicle.accel_min, params.vehicle.accel_max);

    // A stop target becomes a virtual exact-stop node appended to the
    // profile. Braking then belongs to the reference itself, so the tracker
    // anticipates its onset; ramping in only after the profile would burn
    // distance the stop cannot spare.
    let mut profile = profile.to_vec();
    if let Some(target) = stop_to {
        let last = *profile.last().unwrap();
        if last.v > 1e-6 && target > last.s + 0.05 {
            let aim = (target - STOP_LANDING_ALLOWANCE).max(last.s + 0.02);
            let rem = aim - last.s;
            let a_des = (-last.v * last.v / (2.0 * rem)).max(a_min);
            let stop_s = last.s - last.v * last.v / (2.0 * a_des);
            profile.push(GraphNode {
                layer: last.layer + 1,
                s: stop_s,
                v: 0.0,
                t: last.t + 2.0 * (stop_s - last.s) / last.v,
                cost: last.cost,
                parent: None,
            });
        }
    }
    let profile = &profile[..];

    // Per-segment reference accelerations.
    let seg_accel: Vec<f64> = profile
        .windows(2)
        .map(|w| (w[1].v - w[0].v) / (w[1].t - w[0].t))
        .collect();
    let t_end = profile.last().unwrap().t;
    let reference = |t: f64| -> (f64, f64) {
        if profile.len() == 1 || t >= t_end {
            let last = profile.last().unwrap();
            return (last.s + last.v * (t - last.t), last.v);
        }
        let mut i = 0;
        while i + 2 < profile.len() && profile[i + 1].t <= t {
            i += 1;
        }
        let n = &profile[i];
        let a = seg_accel[i];
        let f = t - n.t;
        (n.s + n.v * f + 0.5 * a * f * f, n.v + a * f)
    };

    // Jerk-limited feedforward: plateau accelerations joined by ramps
    // centered on the switch times. Centering matters twice over: it keeps
    // the net velocity change of each ramp equal to the plateau switch, and
    // a causal ramp would lag max-braking segments with no acceleration
    // headroom left to catch back up.
    let mut ff: Vec<(f64, f64, f64)> = Vec::new(); // (time, accel, velocity)
    if let Some(&a0) = seg_accel.first() {
        ff.push((profile[0].t, a0.clamp(a_min, a_max), profile[0].v));
        let mut prev_end = profile[0].t;
        for i in 1..seg_accel.len() {
            let switch = profile[i].t;
            let from = seg_accel[i - 1].clamp(a_min, a_max);
            let to = seg_accel[i].clamp(a_min, a_max);
            let width = ((to - from).abs() / jerk).max(1e-9);
            let mut t0 = (switch - width / 2.0).max(prev_end);
            let mut t1 = t0 + width;
            let seg_end = profile[i + 1].t;
            if t1 > seg_end {
                t1 = seg_end;
                t0 = (t1 - width).max(prev_end);
            }
            ff.push((t0, from, 0.0));
            ff.push((t1, to, 0.0));
            prev_end = t1;
        }
        ff.push((t_end.max(prev_end + 1e-9), *seg_accel.last().unwrap(), 0.0));
        // Integrate the piecewise-linear acceleration for the velocity track.
        for i in 1..ff.len() {
            let (ta, aa, va) = ff[i - 1];
            let (tb, ab, _) = ff[i];
            let span = tb - ta;
            ff[i].2 = va + 0.5 * (aa + ab) * span;
        }
    }
    let feedforward = |t: f64| -> (f64, f64) {
        match ff.iter().position(|&(bt, _, _)| bt > t) {
            Some(0) => (ff[0].1, ff[0].2),
            Some(i) => {
                let (ta, aa, va) = ff[i - 1];
                let (tb, ab, _) = ff[i];
                let span = tb - ta;
                if span < 1e-12 {
                    (ab, va)
                } else {
                    let f = t - ta;
                    let slope = (ab - aa) / span;
                    (aa + slope * f, va + aa * f + 0.5 * slope * f * f)
                }
            }
            None => ff.last().map_or((0.0, 0.0), |&(_, a, v)| (a, v)),
        }
    };

    // A terminal stop is also implied by a profile that ends at rest.
    let stop_to = stop_to.or_else(|| {
        let last = profile.last().unwrap();
        (last.v <= 1e-9).then_some(last.s)
    });

    let mut samples = Vec::new();
    let mut s = profile[0].s;
    let mut v = profile[0].v;
    let mut a_cmd = seg_accel.first().copied().unwrap_or(0.0).clamp(a_min, a_max);
    let mut t = profile[0].t;
    let hold_after_stop = 0.4;
    let mut stopped_at: Option<f64> = None;
    let max_t = t_end + 60.0;

    loop {
        let in_profile = t < t_end - 1e-9;
        let a_tgt = if in_profile {
            // Velocity is tracked against the ramped feedforward (tracking
            // the raw step profile would fight the anticipated ramps);
            // position against the exact node motion, draining ramp drift.
            let (s_ref, _) = reference(t);
            let (a_ff, v_ff) = feedforward(t);
            a_ff + TRACK_GAIN_V * (v_ff - v) + TRACK_GAIN_S * (s_ref - s)
        } else if let Some(target) = stop_to {
            let rem = target - s;
            if v <= 1e-9 {
                0.0
            } else if rem <= 1e-4 {
                -v / dt
            } else {
                // The pure stop law decays algebraically near rest; a floor
                // lands the last centimeters in finite time.
                (-v * v / (2.0 * rem)).min(-0.3)
            }
        } else {
            0.0
        };
        let a_tgt = a_tgt.clamp(a_min, a_max);
        a_cmd += (a_tgt - a_cmd).clamp(-jerk * dt, jerk * dt);

        // Never integrate through zero speed.
        if v + a_cmd * dt < 0.0 {
            a_cmd = -v / dt;
        }
        // Terminal stops never overshoot the target station.
        if let Some(target) = stop_to {
            if !in_profile {
                let s_next = s + v * dt + 0.5 * a_cmd * dt * dt;
                if s_next > target {
                    let a_fix = 2.0 * (target - s - v * dt) / (dt * dt);
                    a_cmd = a_fix.min(a_cmd);
                    if v + a_cmd * dt < 0.0 {
                        a_cmd = -v / dt;
                    }
                }
            }
        }

        samples.push(TrajectorySample { t, s, v, a: a_cmd });
        s += v * dt + 0.5 * a_cmd * dt * dt;
        v = (v + a_cmd * dt).max(0.0);
        if v < 1e-12 {
            v = 0.0;
        }
        if let Some(target) = stop_to {
            if !in_profile && s > target {
                // Sub-millimeter landing correction at the very last step.
                s = target;
            }
        }
        t += dt;

        let stopping_phase = !in_profile && stop_to.is_some();
        if stopping_phase && v == 0.0 && stopped_at.is_none() {
            stopped_at = Some(t);
        }
        let done = if stop_to.is_some() {
            stopped_at.map_or(false, |ts| t >= ts + hold_after_stop)
        } else {
            t >= t_end - 1e-9
        };
        if done || t > max_t {
            let a = if v == 0.0 { 0.0 } else { a_cmd };
            samples.push(TrajectorySample { t, s, v, a });
            break;
        }
    }

    Ok(PlannedTrajectory {
        dt,
        samples,
        provenance,
    })
}

/// Stop-from-here trajectory used when no profile survives the checks: brake
/// at the comfortable fallback rate, harder if the nearest stop target
/// requires it, down to standstill.
pub fn fallback_trajectory(ctx: &PlanningContext, gates: &Gates) -> PlannedTrajectory {
    let targets = gate_stop_targets(ctx, gates, ctx.ego_s);
    let nearest = targets.into_iter().fold(f64::INFINITY, f64::min);
    let mut decel = ctx.params.safety.fallback_decel;
    if nearest.is_finite() {
        let rem = (nearest - ctx.ego_s).max(0.05);
        let needed = -ctx.ego_v * ctx.ego_v / (2.0 * rem);
        decel = decel.min(needed).max(ctx.params.vehicle.accel_min);
    }
    let stop_at = if nearest.is_finite() {
        nearest
    } else if decel < 0.0 {
        ctx.ego_s + ctx.ego_v * ctx.ego_v / (2.0 * decel.abs())
    } else {
        ctx.ego_s
    };
    let start = GraphNode {
        layer: 0,
        s: ctx.ego_s,
        v: ctx.ego_v,
        t: 0.0,
        cost: 0.0,
        parent: None,
    };
    smooth(
        &[start],
        ctx.params,
        Some(stop_at.min(ctx.path.length())),
        Provenance {
            fallback: true,
            profile_len: 1,
            ..Default::default()
        },
    )
    .expect("single-node profiles are monotone")
}

/// Stop targets implied by every active gate ahead of `from_s`.
fn gate_stop_targets(ctx: &PlanningContext, gates: &Gates, from_s: f64) -> Vec<f64> {
    let mut targets = Vec::new();
    for gate in &gates.priority {
        if gate.station > from_s + 1e-6 {
            targets.push(gate.station - ctx.params.safety.stop_margin);
        }
    }
    for fc in &gates.follows {
        let t = fc.lead_s - ctx.params.vehicle.length - ctx.params.safety.standstill_gap;
        if t > from_s + 1e-6 {
            targets.push(t);
        }
    }
    targets
}

/// The outcome of one planning cycle.
pub struct PlanOutcome {
    pub trajectory: PlannedTrajectory,
    /// Search diagnostics, absent when the search itself found nothing.
    pub search: Option<(SearchSpace, SearchResult)>,
}

/// Walks the best profile, backtracking wherever priority is too low, and
/// returns the accepted trajectory. Never fails open: when nothing passes,
/// the fallback stop is returned.
pub fn determine(
    ctx: &PlanningContext,
    space: &SearchSpace,
    result: &SearchResult,
) -> PlannedTrajectory {
    let gates = derive_gates(ctx);
    let mut profile = result.best_profile();
    let mut rounds = 0usize;
    let cap = space.layers() + 2;
    loop {
        rounds += 1;
        let Some((layer, gate)) = first_violation(ctx, &gates, &profile) else {
            break;
        };
        if rounds > cap {
            return fallback_trajectory(ctx, &gates);
        }
        match check_and_expand(ctx, space, result, layer, &gate) {
            Some(recovered) => profile = recovered,
            None => return fallback_trajectory(ctx, &gates),
        }
    }

    let last = profile.last().expect("profiles are non-empty");
    // If an active gate remains ahead of the accepted profile, the plan ends
    // with an explicit braking tail to its stop target: every emitted plan is
    // executable to standstill without touching a gated conflict.
    let stop_to = gate_stop_targets(ctx, &gates, last.s)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let stop_to = (stop_to.is_finite()).then_some(stop_to.max(last.s));

    let provenance = Provenance {
        profile_cost: last.cost,
        profile_len: profile.len(),
        gated_stations: gates.priority.iter().map(|g| g.station).collect(),
        fallback: false,
        rounds,
    };
    smooth(&profile, ctx.params, stop_to, provenance)
        .expect("search profiles have strictly increasing times")
}

/// Full planning cycle: station selection, bound assembly, search, priority
/// determination, resampling.
pub fn plan(ctx: &PlanningContext) -> PlanOutcome {
    let gates_preview = derive_gates(ctx);
    let stations = cycle_stations(ctx);
    if stations.len() < 2 {
        // Out of path: stop at the end.
        return PlanOutcome {
            trajectory: fallback_trajectory(ctx, &gates_preview),
            search: None,
        };
    }

    let mut v_upper: Vec<f64> = stations
        .iter()
        .map(|&s| {
            let mut bound = ctx.path.speed_limit_at(s);
            for c in &ctx.observation_constraints {
                if s <= c.observation_s + 1e-9 && ctx.ego_s <= c.observation_s {
                    bound = bound.min(c.speed_bound);
                }
            }
            bound
        })
        .collect();
    // The current state must stay admissible even when a bound just dropped.
    v_upper[0] = v_upper[0].max(ctx.ego_v);
    let v_lower = vec![0.0; stations.len()];

    let space = match SearchSpace::new(stations, v_lower, v_upper, &ctx.params.search) {
        Ok(space) => space,
        Err(_) => {
            return PlanOutcome {
                trajectory: fallback_trajectory(ctx, &gates_preview),
                search: None,
            }
        }
    };
    match search(&space, ctx.ego_v, 0.0) {
        Ok(result) => {
            let trajectory = determine(ctx, &space, &result);
            PlanOutcome {
                trajectory,
                search: Some((space, result)),
            }
        }
        Err(SearchError::EmptyResult) | Err(SearchError::BadInitialSpeed { .. }) => PlanOutcome {
            trajectory: fallback_trajectory(ctx, &gates_preview),
            search: None,
        },
        Err(SearchError::InvalidSpace(_)) => PlanOutcome {
            trajectory: fallback_trajectory(ctx, &gates_preview),
            search: None,
        },
    }
}

/// Stations for this cycle: the path's selected points from the ego station
/// forward, capped in count, with the ego station itself as layer zero.
fn cycle_stations(ctx: &PlanningContext) -> Vec<f64> {
    let all = select_path_points(
        ctx.path,
        &ctx.interaction_points,
        ctx.params.search.max_gap,
    );
    let mut stations = vec![ctx.ego_s];
    for s in all {
        if s > ctx.ego_s + 0.25 {
            stations.push(s);
        }
    }
    stations.truncate(ctx.params.search.max_layers);
    stations
}
