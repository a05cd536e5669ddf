//! Layered station-speed-time graph search.
//!
//! Stations along the path form layers; a node is a (station, speed, time)
//! state reached under some acceleration sequence. Expansion is best-first on
//! accumulated cost with per-layer local truncation: inside each discretized
//! (speed, time) cell only the cheapest node is ever expanded.

use crate::config::SearchParams;
use crate::path::{InteractionPoint, PathProfile, STATION_EPS};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

/// Hard cap on the station gap; wider gaps make the constant-acceleration
/// expansion a poor model of the speed-limit profile.
pub const MAX_STATION_GAP: f64 = 10.0 + 1e-9;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("initial speed {v0} outside the first layer's bounds [{lo}, {hi}]")]
    BadInitialSpeed { v0: f64, lo: f64, hi: f64 },
    #[error("no node beyond the first layer is reachable")]
    EmptyResult,
}

/// The sampled search space: stations, per-layer speed bounds and the
/// expansion constants. Immutable once built.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub stations: Vec<f64>,
    pub v_lower: Vec<f64>,
    pub v_upper: Vec<f64>,
    /// Time horizon (s).
    pub horizon: f64,
    /// Minimum speed of any expanded child (m/s).
    pub min_speed: f64,
    /// Discretized acceleration set (m/s^2), ascending.
    pub accels: Vec<f64>,
    pub w_accel: f64,
    pub w_speed_dev: f64,
    /// Truncation cell size in speed (m/s).
    pub res_v: f64,
    /// Truncation cell size in time (s).
    pub res_t: f64,
    pub max_iter: usize,
    /// Verify the one-expanded-node-per-cell property before returning.
    pub validate_cells: bool,
}

impl SearchSpace {
    pub fn new(
        stations: Vec<f64>,
        v_lower: Vec<f64>,
        v_upper: Vec<f64>,
        params: &SearchParams,
    ) -> Result<Self, SearchError> {
        if stations.len() < 2 {
            return Err(SearchError::InvalidSpace(
                "need at least two stations".into(),
            ));
        }
        if stations.len() != v_lower.len() || stations.len() != v_upper.len() {
            return Err(SearchError::InvalidSpace(
                "per-layer bounds must match the station count".into(),
            ));
        }
        for w in stations.windows(2) {
            if w[1] <= w[0] {
                return Err(SearchError::InvalidSpace(format!(
                    "stations must strictly increase, got {} after {}",
                    w[1], w[0]
                )));
            }
            if w[1] - w[0] > MAX_STATION_GAP {
                return Err(SearchError::InvalidSpace(format!(
                    "station gap {:.2} m exceeds the {:.0} m cap",
                    w[1] - w[0],
                    MAX_STATION_GAP
                )));
            }
        }
        let accels = params.accels.clone();
        let has_neg = accels.iter().any(|&a| a < 0.0);
        let has_pos = accels.iter().any(|&a| a > 0.0);
        let has_zero = accels.iter().any(|&a| a.abs() < 1e-3);
        if !(has_neg && has_pos && has_zero) {
            return Err(SearchError::InvalidSpace(
                "acceleration set needs a negative, a near-zero and a positive entry".into(),
            ));
        }
        if params.res_v <= 0.0 || params.res_t <= 0.0 || params.horizon <= 0.0 {
            return Err(SearchError::InvalidSpace(
                "resolutions and horizon must be positive".into(),
            ));
        }
        Ok(SearchSpace {
            stations,
            v_lower,
            v_upper,
            horizon: params.horizon,
            min_speed: params.min_speed,
            accels,
            w_accel: params.w_accel,
            w_speed_dev: params.w_speed_dev,
            res_v: params.res_v,
            res_t: params.res_t,
            max_iter: params.max_iter,
            validate_cells: params.validate_cells,
        })
    }

    pub fn layers(&self) -> usize {
        self.stations.len()
    }
}

/// One search node: state at a station, accumulated cost, parent link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub layer: usize,
    pub s: f64,
    pub v: f64,
    pub t: f64,
    pub cost: f64,
    /// Arena index of the parent; `None` for the start node.
    pub parent: Option<usize>,
}

/// Constant-acceleration step from `(v, t)` over a gap of `ds`.
///
/// Returns the child speed and time, or `None` when the vehicle would stop
/// before covering the gap. Near-zero accelerations use the constant-speed
/// limit forms.
pub fn expand_kinematics(v: f64, t: f64, ds: f64, accel: f64) -> Option<(f64, f64)> {
    debug_assert!(ds > 0.0);
    if accel.abs() < 1e-6 {
        if v <= 1e-9 {
            return None;
        }
        return Some((v, t + ds / v));
    }
    let disc = v * v + 2.0 * accel * ds;
    if disc <= 0.0 {
        return None;
    }
    let v_child = disc.sqrt();
    Some((v_child, t + (v_child - v) / accel))
}

/// Accumulated cost of a child: parent cost plus the control cost
/// `a^2 * dt` and the speed-limit deviation `|v - v_limit|`, weighted.
pub fn node_cost(
    parent_cost: f64,
    accel: f64,
    dt: f64,
    v: f64,
    v_limit: f64,
    w_accel: f64,
    w_speed_dev: f64,
) -> f64 {
    debug_assert!(dt >= 0.0);
    parent_cost + w_accel * accel * accel * dt + w_speed_dev * (v - v_limit).abs()
}

/// Feasibility-checked expansion of one node under one acceleration.
///
/// The child must clear the gap, respect the next layer's speed bounds and
/// the minimum speed, and stay within the time horizon.
pub fn expand(space: &SearchSpace, node: &GraphNode, accel: f64) -> Option<GraphNode> {
    let next = node.layer + 1;
    if next >= space.layers() {
        return None;
    }
    let ds = space.stations[next] - node.s;
    let (v_child, t_child) = expand_kinematics(node.v, node.t, ds, accel)?;
    if v_child < space.min_speed
        || v_child < space.v_lower[next]
        || v_child > space.v_upper[next]
        || t_child > space.horizon
    {
        return None;
    }
    let cost = node_cost(
        node.cost,
        accel,
        t_child - node.t,
        v_child,
        space.v_upper[next],
        space.w_accel,
        space.w_speed_dev,
    );
    Some(GraphNode {
        layer: next,
        s: space.stations[next],
        v: v_child,
        t: t_child,
        cost,
        parent: None,
    })
}

/// Everything the search visited, plus the selected profile.
#[derive(Debug, Clone)]
pub struct SearchResult {
    /// All expanded nodes, in expansion order.
    pub nodes: Vec<GraphNode>,
    /// Arena indices per layer.
    pub layers: Vec<Vec<usize>>,
    /// Deepest layer reached.
    pub deepest: usize,
    /// Arena indices of the selected profile, start to leaf.
    pub best: Vec<usize>,
}

impl SearchResult {
    pub fn best_profile(&self) -> Vec<GraphNode> {
        self.best.iter().map(|&i| self.nodes[i]).collect()
    }

    /// Chain of arena indices from the start node to `leaf`.
    pub fn path_to(&self, leaf: usize) -> Vec<usize> {
        let mut chain = vec![leaf];
        while let Some(p) = self.nodes[*chain.last().unwrap()].parent {
            chain.push(p);
        }
        chain.reverse();
        chain
    }

    /// Trace dump, one line per expanded node: `layer s v t cost parent`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let parent = n.parent.map(|p| p as i64).unwrap_or(-1);
            let _ = writeln!(out, "{} {} {} {} {} {}", n.layer, n.s, n.v, n.t, n.cost, parent);
            debug_assert!(i == 0 || n.cost >= 0.0);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    cost: f64,
    t: f64,
    seq: u64,
    node: GraphNode,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    // Reversed so the BinaryHeap pops lowest cost, then lowest time, then
    // first-inserted. The fixed ordering keeps searches deterministic.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.t.total_cmp(&self.t))
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct CellSlot {
    cost: f64,
    seq: u64,
    expanded: bool,
}

fn cell_key(v: f64, t: f64, res_v: f64, res_t: f64) -> (i64, i64) {
    ((v / res_v).floor() as i64, (t / res_t).floor() as i64)
}

/// Best-first search over the layered space from an initial speed and time.
///
/// Children are kept only when they win their truncation cell; a cell whose
/// winner was already expanded never admits another node, so each layer holds
/// at most one expanded node per cell. Terminates when the open list drains
/// or after `max_iter` expansions.
pub fn search(space: &SearchSpace, v0: f64, t0: f64) -> Result<SearchResult, SearchError> {
    if v0 < space.v_lower[0] - 1e-9 || v0 > space.v_upper[0] + 1e-9 {
        return Err(SearchError::BadInitialSpeed {
            v0,
            lo: space.v_lower[0],
            hi: space.v_upper[0],
        });
    }
    let k = space.layers();
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut layers: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cells: Vec<HashMap<(i64, i64), CellSlot>> = vec![HashMap::new(); k];
    let mut open = BinaryHeap::new();
    let mut seq: u64 = 0;

    let root = GraphNode {
        layer: 0,
        s: space.stations[0],
        v: v0,
        t: t0,
        cost: 0.0,
        parent: None,
    };
    cells[0].insert(
        cell_key(v0, t0, space.res_v, space.res_t),
        CellSlot {
            cost: 0.0,
            seq,
            expanded: false,
        },
    );
    open.push(OpenEntry {
        cost: 0.0,
        t: t0,
        seq,
        node: root,
    });

    let mut deepest = 0;
    let mut expansions = 0usize;
    while let Some(entry) = open.pop() {
        let key = cell_key(entry.node.v, entry.node.t, space.res_v, space.res_t);
        let slot = cells[entry.node.layer]
            .get_mut(&key)
            .expect("every queued node owns a cell");
        if slot.seq != entry.seq {
            // Superseded by a cheaper node in the same cell; abandoned.
            continue;
        }
        slot.expanded = true;

        let id = nodes.len();
        nodes.push(entry.node);
        layers[entry.node.layer].push(id);
        deepest = deepest.max(entry.node.layer);

        expansions += 1;
        if expansions >= space.max_iter {
            break;
        }
        if entry.node.layer + 1 >= k {
            continue;
        }
        for &a in &space.accels {
            let Some(mut child) = expand(space, &entry.node, a) else {
                continue;
            };
            child.parent = Some(id);
            let ckey = cell_key(child.v, child.t, space.res_v, space.res_t);
            let claim = match cells[child.layer].get(&ckey) {
                None => true,
                Some(slot) => !slot.expanded && child.cost < slot.cost,
            };
            if claim {
                seq += 1;
                cells[child.layer].insert(
                    ckey,
                    CellSlot {
                        cost: child.cost,
                        seq,
                        expanded: false,
                    },
                );
                open.push(OpenEntry {
                    cost: child.cost,
                    t: child.t,
                    seq,
                    node: child,
                });
            }
        }
    }

    if deepest == 0 {
        return Err(SearchError::EmptyResult);
    }
    if space.validate_cells {
        verify_cell_uniqueness(&nodes, &layers, space.res_v, space.res_t);
    }

    // Best node at the deepest layer: lowest cost, ties by time then order.
    let best_leaf = *layers[deepest]
        .iter()
        .min_by(|&&a, &&b| {
            nodes[a]
                .cost
                .total_cmp(&nodes[b].cost)
                .then(nodes[a].t.total_cmp(&nodes[b].t))
                .then(a.cmp(&b))
        })
        .expect("deepest layer is non-empty");

    let result = SearchResult {
        best: {
            let mut chain = vec![best_leaf];
            while let Some(p) = nodes[*chain.last().unwrap()].parent {
                chain.push(p);
            }
            chain.reverse();
            chain
        },
        nodes,
        layers,
        deepest,
    };
    Ok(result)
}

/// Panics if any layer expanded two nodes in one truncation cell.
pub fn verify_cell_uniqueness(
    nodes: &[GraphNode],
    layers: &[Vec<usize>],
    res_v: f64,
    res_t: f64,
) {
    for (l, ids) in layers.iter().enumerate() {
        let mut seen = HashMap::new();
        for &id in ids {
            let key = cell_key(nodes[id].v, nodes[id].t, res_v, res_t);
            if let Some(prev) = seen.insert(key, id) {
                panic!(
                    "layer {l}: nodes {prev} and {id} share truncation cell {key:?} \
                     (v={}, t={})",
                    nodes[id].v, nodes[id].t
                );
            }
        }
    }
}

/// Selects the stations defining the search layers.
///
/// Every interaction point's station and observation station is kept
/// verbatim; a station is inserted wherever the speed bound drifts more than
/// 0.5 m/s since the previous kept station; remaining gaps are subdivided to
/// at most `max_gap`. Stations are deduplicated within [`STATION_EPS`].
pub fn select_path_points(
    path: &PathProfile,
    interaction_points: &[InteractionPoint],
    max_gap: f64,
) -> Vec<f64> {
    assert!(max_gap > 0.0);
    let end = path.length();
    let mut stations = vec![0.0, end];
    for ip in interaction_points {
        if ip.ego_s <= end {
            stations.push(ip.ego_s);
        }
        if let Some(obs) = ip.observation_s {
            if obs <= end {
                stations.push(obs);
            }
        }
    }

    // Speed-limit breakpoints: cumulative drift over the resampled bounds.
    let mut last_bound = path.speed_limits()[0];
    for (p, &bound) in path.points().iter().zip(path.speed_limits()) {
        if (bound - last_bound).abs() > 0.5 {
            stations.push(p.s);
            last_bound = bound;
        }
    }

    stations.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stations.dedup_by(|a, b| (*a - *b).abs() < STATION_EPS);

    // Subdivide what remains.
    let mut out = Vec::with_capacity(stations.len());
    for i in 0..stations.len() {
        if i > 0 {
            let gap = stations[i] - stations[i - 1];
            if gap > max_gap {
                let pieces = (gap / max_gap).ceil() as usize;
                for j in 1..pieces {
                    out.push(stations[i - 1] + gap * j as f64 / pieces as f64);
                }
            }
        }
        out.push(stations[i]);
    }
    out
}
