//! Path geometry: arc-length-parameterized profiles, interaction-point
//! detection between two paths, and the speed bounds derived from curvature
//! and from not-yet-observable conflict areas.

use thiserror::Error;

/// Resampling step used for every path polyline (m).
pub const RESAMPLE_STEP: f64 = 0.5;

/// Stations closer than this are considered the same point (m).
pub const STATION_EPS: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("a path needs at least two distinct waypoints")]
    TooShort,
    #[error("path kinks by {degrees:.1} deg at s = {s:.2} m; segments must turn < 90 deg")]
    Kink { s: f64, degrees: f64 },
    #[error("speed limit must be non-negative, got {0}")]
    NegativeSpeedLimit(f64),
    #[error("observation-point bound needs a positive give-way time, got {0}")]
    NonPositiveGiveWayTime(f64),
}

/// One sample of a path: position, accumulated arc length, tangent and curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub s: f64,
    pub yaw: f64,
    pub curvature: f64,
}

/// A fixed path resampled at [`RESAMPLE_STEP`], with a per-point speed bound.
///
/// Immutable after construction apart from tightening the speed bound; shared
/// freely between planning cycles.
#[derive(Debug, Clone)]
pub struct PathProfile {
    points: Vec<PathPoint>,
    speed_limit: Vec<f64>,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Absolute angle difference wrapped to `[0, pi]`.
pub fn angle_between(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

fn dist2(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - bx) * (ax - bx) + (ay - by) * (ay - by)
}

/// Curvature of the circle through three points; 0 for collinear points.
fn three_point_curvature(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let ac = (c.0 - a.0, c.1 - a.1);
    let bc = (c.0 - b.0, c.1 - b.1);
    let cross = ab.0 * ac.1 - ab.1 * ac.0;
    let denom = (ab.0 * ab.0 + ab.1 * ab.1).sqrt()
        * (ac.0 * ac.0 + ac.1 * ac.1).sqrt()
        * (bc.0 * bc.0 + bc.1 * bc.1).sqrt();
    if denom < 1e-12 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

impl PathProfile {
    /// Builds a profile from waypoints, resampling at [`RESAMPLE_STEP`] and
    /// deriving yaw and curvature from the resampled polyline.
    pub fn from_waypoints(waypoints: &[(f64, f64)], speed_limit: f64) -> Result<Self, PathError> {
        if speed_limit < 0.0 {
            return Err(PathError::NegativeSpeedLimit(speed_limit));
        }
        // Drop consecutive duplicates before measuring length.
        let mut wps: Vec<(f64, f64)> = Vec::with_capacity(waypoints.len());
        for &w in waypoints {
            if wps
                .last()
                .map_or(true, |l| dist2(l.0, l.1, w.0, w.1) > 1e-12)
            {
                wps.push(w);
            }
        }
        if wps.len() < 2 {
            return Err(PathError::TooShort);
        }
        let mut cum = vec![0.0];
        for i in 1..wps.len() {
            let d = dist2(wps[i - 1].0, wps[i - 1].1, wps[i].0, wps[i].1).sqrt();
            cum.push(cum[i - 1] + d);
        }
        let total = *cum.last().unwrap();
        if total < RESAMPLE_STEP {
            return Err(PathError::TooShort);
        }

        // Resample positions at the fixed step, keeping the exact end point.
        let mut xy = Vec::new();
        let mut s = 0.0;
        let mut seg = 0;
        loop {
            while seg + 2 < cum.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let seg_len = cum[seg + 1] - cum[seg];
            let frac = if seg_len > 1e-12 {
                ((s - cum[seg]) / seg_len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let x = wps[seg].0 + frac * (wps[seg + 1].0 - wps[seg].0);
            let y = wps[seg].1 + frac * (wps[seg + 1].1 - wps[seg].1);
            xy.push((x, y));
            if s >= total {
                break;
            }
            s = (s + RESAMPLE_STEP).min(total);
            // Avoid a duplicated final sample when total is a step multiple.
            if total - s < 1e-9 {
                s = total;
            }
        }

        // Kinks are checked on raw segment directions; the smoothed per-point
        // yaw below would smear a sharp reversal past the threshold.
        for i in 1..xy.len() - 1 {
            let d0 = (xy[i].1 - xy[i - 1].1).atan2(xy[i].0 - xy[i - 1].0);
            let d1 = (xy[i + 1].1 - xy[i].1).atan2(xy[i + 1].0 - xy[i].0);
            let turn = angle_between(d1, d0);
            if turn >= std::f64::consts::FRAC_PI_2 {
                return Err(PathError::Kink {
                    s: i as f64 * RESAMPLE_STEP,
                    degrees: turn.to_degrees(),
                });
            }
        }

        // Arc length of the resampled polyline is re-accumulated so that
        // station lookups and the stored geometry agree exactly.
        let n = xy.len();
        let mut points = Vec::with_capacity(n);
        let mut acc = 0.0;
        for i in 0..n {
            if i > 0 {
                acc += dist2(xy[i - 1].0, xy[i - 1].1, xy[i].0, xy[i].1).sqrt();
            }
            let (prev, next) = match i {
                0 => (xy[0], xy[1]),
                _ if i == n - 1 => (xy[n - 2], xy[n - 1]),
                _ => (xy[i - 1], xy[i + 1]),
            };
            let yaw = (next.1 - prev.1).atan2(next.0 - prev.0);
            let curvature = if i == 0 || i == n - 1 {
                0.0
            } else {
                three_point_curvature(xy[i - 1], xy[i], xy[i + 1])
            };
            points.push(PathPoint {
                x: xy[i].0,
                y: xy[i].1,
                s: acc,
                yaw,
                curvature,
            });
        }
        let speed_limit = vec![speed_limit; points.len()];
        Ok(PathProfile {
            points,
            speed_limit,
        })
    }

    pub fn points(&self) -> &[PathPoint] {
        &self.points
    }

    /// Total arc length (m).
    pub fn length(&self) -> f64 {
        self.points.last().unwrap().s
    }

    fn index_at(&self, s: f64) -> usize {
        match self
            .points
            .binary_search_by(|p| p.s.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        }
    }

    /// Interpolated path point at station `s` (clamped to the path domain).
    pub fn sample(&self, s: f64) -> PathPoint {
        let s = s.clamp(0.0, self.length());
        let i = self.index_at(s).min(self.points.len() - 2);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let span = b.s - a.s;
        let f = if span > 1e-12 { (s - a.s) / span } else { 0.0 };
        PathPoint {
            x: a.x + f * (b.x - a.x),
            y: a.y + f * (b.y - a.y),
            s,
            yaw: a.yaw + f * wrap_angle(b.yaw - a.yaw),
            curvature: a.curvature + f * (b.curvature - a.curvature),
        }
    }

    /// Speed bound at station `s` (linear interpolation between samples).
    pub fn speed_limit_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let i = self.index_at(s).min(self.points.len() - 2);
        let (sa, sb) = (self.points[i].s, self.points[i + 1].s);
        let span = sb - sa;
        let f = if span > 1e-12 { (s - sa) / span } else { 0.0 };
        self.speed_limit[i] + f * (self.speed_limit[i + 1] - self.speed_limit[i])
    }

    pub fn speed_limits(&self) -> &[f64] {
        &self.speed_limit
    }

    /// Tightens the stored per-point bound to `min(existing, bound[i])`.
    pub fn tighten_speed_limit(&mut self, bounds: &[f64]) {
        assert_eq!(bounds.len(), self.speed_limit.len());
        for (limit, b) in self.speed_limit.iter_mut().zip(bounds) {
            *limit = limit.min(*b);
        }
    }

    /// Closest station to a point, with the distance to the path.
    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for w in self.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 1e-12 {
                (((x - a.x) * dx + (y - a.y) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (a.x + t * dx, a.y + t * dy);
            let d2 = dist2(x, y, px, py);
            if d2 < best.1 {
                best = (a.s + t * (b.s - a.s), d2);
            }
        }
        (best.0, best.1.sqrt())
    }
}

/// How two paths share space at an interaction point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapKind {
    /// Transversal crossing: the conflict area is a single point.
    Point,
    /// Entry into an extended shared stretch (merging; car following is the
    /// degenerate case where the shared stretch starts at s = 0).
    LineEntry,
}

/// A location where the ego path and one agent path intend to occupy the
/// same space, plus the geometry the interaction model needs there.
#[derive(Debug, Clone)]
pub struct InteractionPoint {
    /// Index among the points detected for this agent.
    pub id: usize,
    /// Agent index in the owning context.
    pub agent: usize,
    /// Station of the conflict on the ego path (m).
    pub ego_s: f64,
    /// Station of the conflict on the agent path (m).
    pub agent_s: f64,
    /// World position of the conflict.
    pub position: (f64, f64),
    /// Angle between the two path tangents at the conflict, in [0, pi].
    pub interaction_angle: f64,
    pub kind: OverlapKind,
    /// Ego station from which the conflict area is fully observable, when
    /// the approach is occluded. Always strictly before `ego_s`.
    pub observation_s: Option<f64>,
}

/// Finds every interaction point between the ego path and one agent path.
///
/// Ego stations closer than `overlap_radius` to the agent polyline are
/// grouped into maximal runs. A run longer than `2 * overlap_radius` of arc
/// length is an extended shared stretch and collapses to a [`OverlapKind::LineEntry`]
/// at its first station; a shorter run is a crossing and collapses to a
/// [`OverlapKind::Point`] at the closest-approach station. Disjoint paths
/// yield an empty list.
pub fn find_interaction_points(
    ego: &PathProfile,
    agent: &PathProfile,
    agent_id: usize,
    overlap_radius: f64,
) -> Vec<InteractionPoint> {
    assert!(overlap_radius > 0.0, "overlap radius must be positive");
    let within: Vec<(usize, f64)> = ego
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (_, d) = agent.project(p.x, p.y);
            (i, d)
        })
        .collect();

    let mut result = Vec::new();
    let mut run_start: Option<usize> = None;
    let n = within.len();
    for i in 0..=n {
        let inside = i < n && within[i].1 < overlap_radius;
        match (inside, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(start)) => {
                let end = i - 1; // inclusive
                let run_len = ego.points()[end].s - ego.points()[start].s;
                let (idx, kind) = if run_len > 2.0 * overlap_radius {
                    (start, OverlapKind::LineEntry)
                } else {
                    // Closest approach within the run.
                    let best = (start..=end)
                        .min_by(|&a, &b| within[a].1.partial_cmp(&within[b].1).unwrap())
                        .unwrap();
                    (best, OverlapKind::Point)
                };
                let ep = ego.points()[idx];
                let (agent_s, _) = agent.project(ep.x, ep.y);
                let agent_yaw = agent.sample(agent_s).yaw;
                result.push(InteractionPoint {
                    id: result.len(),
                    agent: agent_id,
                    ego_s: ep.s,
                    agent_s,
                    position: (ep.x, ep.y),
                    interaction_angle: angle_between(ep.yaw, agent_yaw),
                    kind,
                    observation_s: None,
                });
                run_start = None;
            }
            _ => {}
        }
    }
    result
}

/// Per-point speed bound from lateral acceleration: `sqrt(a_lat_max / |kappa|)`,
/// never above the existing bound. Straight samples keep the existing bound.
pub fn curvature_speed_limit(path: &PathProfile, lat_accel_max: f64) -> Vec<f64> {
    assert!(lat_accel_max > 0.0, "lateral acceleration must be positive");
    path.points()
        .iter()
        .zip(path.speed_limits())
        .map(|(p, &limit)| {
            let k = p.curvature.abs();
            if k < 1e-9 {
                limit
            } else {
                limit.min((lat_accel_max / k).sqrt())
            }
        })
        .collect()
}

/// Speed bound that guarantees the remaining travel time to an occluded
/// conflict stays above the required give-way time.
///
/// Returns the bound that applies to all ego stations at or before the
/// observation point, or `None` once the ego has passed the observation
/// point (the area is then fully observed) or when the point has none.
pub fn observation_speed_limit(
    path: &PathProfile,
    point: &InteractionPoint,
    give_way_time: f64,
    ego_s_now: f64,
) -> Result<Option<f64>, PathError> {
    if give_way_time <= 0.0 {
        return Err(PathError::NonPositiveGiveWayTime(give_way_time));
    }
    let obs_s = match point.observation_s {
        Some(s) => s,
        None => return Ok(None),
    };
    if ego_s_now > obs_s {
        return Ok(None);
    }
    let obs = path.sample(obs_s);
    let dist = dist2(obs.x, obs.y, point.position.0, point.position.1).sqrt();
    Ok(Some(dist / give_way_time))
}

/// Walks back along the path from a conflict station until the straight-line
/// distance to the conflict reaches `dist`; that station is the observation
/// point. Falls back to the path start when the path is too short.
pub fn observation_station_for_distance(path: &PathProfile, conflict_s: f64, dist: f64) -> f64 {
    let target = path.sample(conflict_s);
    let mut s = conflict_s;
    while s > 0.0 {
        s = (s - RESAMPLE_STEP).max(0.0);
        let p = path.sample(s);
        if dist2(p.x, p.y, target.x, target.y).sqrt() >= dist {
            return s;
        }
    }
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn straight_x(len: f64, limit: f64) -> PathProfile {
        PathProfile::from_waypoints(&[(0.0, 0.0), (len, 0.0)], limit).unwrap()
    }

    #[test]
    fn arc_length_is_strictly_increasing_from_zero() {
        let p = straight_x(30.0, 10.0);
        assert_eq!(p.points()[0].s, 0.0);
        assert!(p.points().windows(2).all(|w| w[1].s > w[0].s));
        assert_abs_diff_eq!(p.length(), 30.0, epsilon = 1e-9);
    }

    #[test]
    fn kinked_waypoints_are_rejected() {
        let err = PathProfile::from_waypoints(&[(0.0, 0.0), (10.0, 0.0), (0.0, 0.5)], 10.0);
        assert!(matches!(err, Err(PathError::Kink { .. })));
    }

    #[test]
    fn curvature_matches_circle_radius() {
        // Quarter circle of radius 20 m: curvature 0.05 away from the ends.
        let r = 20.0;
        let wps: Vec<(f64, f64)> = (0..=90)
            .map(|deg| {
                let a = (deg as f64).to_radians();
                (r * a.sin(), r * (1.0 - a.cos()))
            })
            .collect();
        let p = PathProfile::from_waypoints(&wps, 15.0).unwrap();
        let mid = p.sample(p.length() / 2.0);
        assert_abs_diff_eq!(mid.curvature.abs(), 1.0 / r, epsilon = 2e-3);
    }

    #[test]
    fn perpendicular_crossing_is_one_point_overlap() {
        let ego = PathProfile::from_waypoints(&[(-20.0, 0.0), (20.0, 0.0)], 10.0).unwrap();
        let agent = PathProfile::from_waypoints(&[(0.0, -20.0), (0.0, 20.0)], 10.0).unwrap();
        let pts = find_interaction_points(&ego, &agent, 0, 2.0);
        assert_eq!(pts.len(), 1);
        let ip = &pts[0];
        assert_eq!(ip.kind, OverlapKind::Point);
        assert_abs_diff_eq!(ip.position.0, 0.0, epsilon = 0.3);
        assert_abs_diff_eq!(ip.position.1, 0.0, epsilon = 0.3);
        assert_abs_diff_eq!(ip.interaction_angle, FRAC_PI_2, epsilon = 1e-6);
    }

    #[test]
    fn identical_paths_are_a_line_overlap_from_the_start() {
        let ego = straight_x(40.0, 10.0);
        let agent = straight_x(40.0, 10.0);
        let pts = find_interaction_points(&ego, &agent, 3, 2.0);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].kind, OverlapKind::LineEntry);
        assert_eq!(pts[0].agent, 3);
        assert_abs_diff_eq!(pts[0].ego_s, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pts[0].interaction_angle, 0.0, epsilon = 1e-9);
    }

    /// Brute-force oracle for the merge case: scan ego stations at 0.1 m
    /// resolution for the first one within the radius of the agent polyline.
    fn brute_force_entry(ego: &PathProfile, agent: &PathProfile, radius: f64) -> f64 {
        let mut s = 0.0;
        while s <= ego.length() {
            let p = ego.sample(s);
            let (_, d) = agent.project(p.x, p.y);
            if d < radius {
                return s;
            }
            s += 0.1;
        }
        f64::NAN
    }

    #[test]
    fn thirty_degree_merge_is_a_line_entry_at_the_approach_station() {
        let ego = straight_x(80.0, 10.0);
        // Agent approaches at 30 deg and then runs along the ego path.
        let a = 30f64.to_radians();
        let merge = (40.0, 0.0);
        let agent = PathProfile::from_waypoints(
            &[
                (merge.0 - 30.0 * a.cos(), 30.0 * a.sin()),
                merge,
                (80.0, 0.0),
            ],
            10.0,
        )
        .unwrap();
        let radius = 2.5;
        let pts = find_interaction_points(&ego, &agent, 0, radius);
        assert_eq!(pts.len(), 1);
        let ip = &pts[0];
        assert_eq!(ip.kind, OverlapKind::LineEntry);
        let expected = brute_force_entry(&ego, &agent, radius);
        assert_abs_diff_eq!(ip.ego_s, expected, epsilon = 0.5 + 1e-9);
        assert_abs_diff_eq!(ip.interaction_angle, PI / 6.0, epsilon = 0.02);
    }

    #[test]
    fn detection_is_symmetric_in_position() {
        let ego = PathProfile::from_waypoints(&[(-20.0, 0.0), (20.0, 0.0)], 10.0).unwrap();
        let agent = PathProfile::from_waypoints(&[(5.0, -20.0), (5.0, 20.0)], 10.0).unwrap();
        let fwd = find_interaction_points(&ego, &agent, 0, 2.0);
        let rev = find_interaction_points(&agent, &ego, 0, 2.0);
        assert_eq!(fwd.len(), 1);
        assert_eq!(rev.len(), 1);
        assert_abs_diff_eq!(fwd[0].position.0, rev[0].position.0, epsilon = 0.6);
        assert_abs_diff_eq!(fwd[0].position.1, rev[0].position.1, epsilon = 0.6);
        assert_abs_diff_eq!(fwd[0].ego_s, rev[0].agent_s, epsilon = 0.6);
    }

    #[test]
    fn interaction_angle_is_invariant_under_rigid_rotation() {
        let rotate = |wps: &[(f64, f64)], a: f64| -> Vec<(f64, f64)> {
            wps.iter()
                .map(|&(x, y)| (x * a.cos() - y * a.sin(), x * a.sin() + y * a.cos()))
                .collect()
        };
        let ego_w = [(-20.0, 0.0), (20.0, 0.0)];
        let agent_w = [(0.0, -20.0), (10.0, 20.0)];
        let base = find_interaction_points(
            &PathProfile::from_waypoints(&ego_w, 10.0).unwrap(),
            &PathProfile::from_waypoints(&agent_w, 10.0).unwrap(),
            0,
            2.0,
        );
        for a in [0.3, 1.1, 2.9, -0.7] {
            let turned = find_interaction_points(
                &PathProfile::from_waypoints(&rotate(&ego_w, a), 10.0).unwrap(),
                &PathProfile::from_waypoints(&rotate(&agent_w, a), 10.0).unwrap(),
                0,
                2.0,
            );
            assert_eq!(turned.len(), base.len());
            assert_abs_diff_eq!(
                turned[0].interaction_angle,
                base[0].interaction_angle,
                epsilon = 0.03
            );
        }
    }

    #[test]
    fn disjoint_paths_yield_nothing() {
        let ego = straight_x(30.0, 10.0);
        let agent = PathProfile::from_waypoints(&[(0.0, 50.0), (30.0, 50.0)], 10.0).unwrap();
        assert!(find_interaction_points(&ego, &agent, 0, 2.0).is_empty());
    }

    #[test]
    fn curvature_bound_follows_sqrt_rule() {
        // kappa = 0.08 -> sqrt(2.0 / 0.08) = 5.0 m/s.
        let r = 12.5;
        let wps: Vec<(f64, f64)> = (0..=60)
            .map(|deg| {
                let a = (deg as f64).to_radians();
                (r * a.sin(), r * (1.0 - a.cos()))
            })
            .collect();
        let path = PathProfile::from_waypoints(&wps, 20.0).unwrap();
        let bounds = curvature_speed_limit(&path, 2.0);
        let mid = path.points().len() / 2;
        assert_abs_diff_eq!(bounds[mid], 5.0, epsilon = 0.1);
    }

    #[test]
    fn zero_curvature_keeps_existing_limit() {
        let path = straight_x(30.0, 8.0);
        let bounds = curvature_speed_limit(&path, 2.0);
        assert!(bounds.iter().all(|&b| (b - 8.0).abs() < 1e-9));
    }

    #[test]
    fn curvature_bound_not_binding_keeps_existing_limit() {
        // kappa = 0.02 -> bound 10.0 > existing 8.0.
        let r = 50.0;
        let wps: Vec<(f64, f64)> = (0..=45)
            .map(|deg| {
                let a = (deg as f64).to_radians();
                (r * a.sin(), r * (1.0 - a.cos()))
            })
            .collect();
        let path = PathProfile::from_waypoints(&wps, 8.0).unwrap();
        let bounds = curvature_speed_limit(&path, 2.0);
        let mid = path.points().len() / 2;
        assert_abs_diff_eq!(bounds[mid], 8.0, epsilon = 1e-9);
    }

    #[test]
    fn curvature_bound_is_monotone_in_lateral_accel() {
        let r = 15.0;
        let wps: Vec<(f64, f64)> = (0..=80)
            .map(|deg| {
                let a = (deg as f64).to_radians();
                (r * a.sin(), r * (1.0 - a.cos()))
            })
            .collect();
        let path = PathProfile::from_waypoints(&wps, 30.0).unwrap();
        let lo = curvature_speed_limit(&path, 1.0);
        let hi = curvature_speed_limit(&path, 2.5);
        assert!(lo.iter().zip(&hi).all(|(a, b)| a <= b));
    }

    fn occluded_point(path: &PathProfile, ego_s: f64, obs_s: f64) -> InteractionPoint {
        let p = path.sample(ego_s);
        InteractionPoint {
            id: 0,
            agent: 0,
            ego_s,
            agent_s: 5.0,
            position: (p.x, p.y),
            interaction_angle: FRAC_PI_2,
            kind: OverlapKind::Point,
            observation_s: Some(obs_s),
        }
    }

    #[test]
    fn observation_bound_is_distance_over_give_way_time() {
        let path = straight_x(60.0, 20.0);
        // Observation point 16 m before the conflict, give-way time 2 s -> 8 m/s.
        let ip = occluded_point(&path, 40.0, 24.0);
        let v = observation_speed_limit(&path, &ip, 2.0, 0.0)
            .unwrap()
            .unwrap();
        assert!((v - 8.0).abs() < 1e-9);
    }

    #[test]
    fn observation_bound_expires_past_the_observation_point() {
        let path = straight_x(60.0, 20.0);
        let ip = occluded_point(&path, 40.0, 24.0);
        assert!(observation_speed_limit(&path, &ip, 2.0, 24.5)
            .unwrap()
            .is_none());
    }

    #[test]
    fn observation_bound_from_lane_length_heuristic() {
        // Lane length 40 m -> distance 6 m -> 3 m/s at 2 s give-way time.
        let path = straight_x(60.0, 20.0);
        let conflict = 40.0;
        let obs = observation_station_for_distance(&path, conflict, 0.15 * 40.0);
        let ip = occluded_point(&path, conflict, obs);
        let v = observation_speed_limit(&path, &ip, 2.0, 0.0)
            .unwrap()
            .unwrap();
        assert_abs_diff_eq!(v, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn observation_bound_rejects_non_positive_time() {
        let path = straight_x(60.0, 20.0);
        let ip = occluded_point(&path, 40.0, 24.0);
        assert!(observation_speed_limit(&path, &ip, 0.0, 0.0).is_err());
    }

    #[test]
    fn observation_bound_scales_linearly() {
        let path = straight_x(100.0, 20.0);
        let base = observation_speed_limit(&path, &occluded_point(&path, 50.0, 40.0), 2.0, 0.0)
            .unwrap()
            .unwrap();
        let double_dist =
            observation_speed_limit(&path, &occluded_point(&path, 50.0, 30.0), 2.0, 0.0)
                .unwrap()
                .unwrap();
        let double_time = observation_speed_limit(&path, &occluded_point(&path, 50.0, 40.0), 4.0, 0.0)
            .unwrap()
            .unwrap();
        assert_abs_diff_eq!(double_dist, 2.0 * base, epsilon = 1e-9);
        assert_abs_diff_eq!(double_time, base / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn project_recovers_station_and_distance() {
        let path = straight_x(30.0, 10.0);
        let (s, d) = path.project(12.3, 4.0);
        assert_abs_diff_eq!(s, 12.3, epsilon = 1e-9);
        assert_abs_diff_eq!(d, 4.0, epsilon = 1e-9);
    }
}
