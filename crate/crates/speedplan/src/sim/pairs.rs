//! Synthetic interaction-pair generator.
//!
//! Stands in for real driving records: each sample is a kinematic encounter
//! of two agents at a shared point, with the signed arrival-time gap assigned
//! by a declared rule. The rule mirrors the feature pipeline the classifier
//! consumes: the agent with the better arrival-window advantage (offset by
//! the envelope protection gaps, weighted by the give-way advantage) passes
//! first. Gap magnitudes follow configurable curves over the interaction
//! angle and relative speed, so the envelope fitter has real structure to
//! recover.

use crate::ipm::{arrival_bounds, eval_poly, AgentKinematics, InteractionPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PairGenError {
    #[error("pair generation needs n > 0")]
    EmptyRequest,
}

/// Generating rule; the defaults keep the gap-magnitude curves flat so the
/// decision offsets stay consistent with what the envelope fit recovers.
#[derive(Debug, Clone)]
pub struct PairGenConfig {
    /// Mean |time gap| for passing-first encounters, quadratic in angle.
    pub overtake_mu: [f64; 3],
    /// Mean |time gap| for yielding encounters, quadratic in angle.
    pub give_way_mu: [f64; 3],
    /// Extra |time gap| per (relative speed)^2, both populations.
    pub speed_quad: f64,
    /// Spread of the gap magnitude (s).
    pub gap_sigma: f64,
    /// Spread of the decision margin (s); zero makes labels exactly
    /// reproducible from the rule.
    pub noise_sigma: f64,
    /// Weight of the give-way advantage in the decision margin.
    pub give_way_weight: f64,
    /// Decision-margin bias; tuned so the default label split is near even.
    pub margin_bias: f64,
    /// Fraction of encounters with a standing competitor.
    pub stopped_fraction: f64,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        PairGenConfig {
            overtake_mu: [0.0, 0.0, 2.5],
            give_way_mu: [0.0, 0.0, 2.5],
            speed_quad: 0.0,
            gap_sigma: 0.3,
            noise_sigma: 0.05,
            give_way_weight: 0.3,
            margin_bias: -1.0,
            stopped_fraction: 0.02,
        }
    }
}

impl PairGenConfig {
    /// Decision offsets implied by the gap curves: the three-sigma envelope
    /// edge of each population at a right-angle crossing.
    pub fn rule_offsets(&self) -> (f64, f64) {
        let at = PI / 2.0;
        let overtake = -(eval_poly(&self.overtake_mu, at) - 3.0 * self.gap_sigma);
        let give_way = eval_poly(&self.give_way_mu, at) - 3.0 * self.gap_sigma;
        (overtake, give_way)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// The deterministic part of the decision rule: the margin in favor of the
/// ego passing first, before noise.
pub fn decision_margin(cfg: &PairGenConfig, ego: &AgentKinematics, agent: &AgentKinematics) -> f64 {
    let (k_overtake, k_give_way) = cfg.rule_offsets();
    let eb = arrival_bounds(ego.speed, ego.distance, ego.accel_max, ego.accel_min)
        .expect("generator kinematics are valid");
    let ab = arrival_bounds(agent.speed, agent.distance, agent.accel_max, agent.accel_min)
        .expect("generator kinematics are valid");
    let overtake_adv = eb.earliest - ab.earliest + k_overtake.abs();
    let give_way_adv = if ab.latest.is_infinite() {
        -10.0
    } else if eb.latest.is_infinite() {
        10.0
    } else {
        (eb.latest - ab.latest - k_give_way.abs()).clamp(-10.0, 10.0)
    };
    -(overtake_adv + cfg.give_way_weight * give_way_adv + cfg.margin_bias)
}

/// Draws `n` labeled interaction pairs; fully determined by `(cfg, n, seed)`.
pub fn generate_interaction_pairs(
    cfg: &PairGenConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<InteractionPair>, PairGenError> {
    if n == 0 {
        return Err(PairGenError::EmptyRequest);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let angle = rng.gen_range(0.05..PI - 0.05);
        let rel_speed = rng.gen_range(-8.0..8.0);
        let ego = AgentKinematics {
            speed: rng.gen_range(0.5..12.0),
            distance: rng.gen_range(2.0..60.0),
            accel_max: rng.gen_range(1.0..2.0),
            accel_min: -rng.gen_range(2.0..4.0),
        };
        let stopped = rng.gen_range(0.0..1.0) < cfg.stopped_fraction;
        let agent = AgentKinematics {
            speed: if stopped { 0.0 } else { rng.gen_range(0.5..12.0) },
            distance: rng.gen_range(2.0..60.0),
            accel_max: rng.gen_range(1.0..2.0),
            accel_min: -rng.gen_range(2.0..4.0),
        };

        let margin = decision_margin(cfg, &ego, &agent) + cfg.noise_sigma * gaussian(&mut rng);
        let ego_first = margin > 0.0;

        let mu_curve = if ego_first {
            &cfg.overtake_mu
        } else {
            &cfg.give_way_mu
        };
        let mu = eval_poly(mu_curve, angle) + cfg.speed_quad * rel_speed * rel_speed;
        let magnitude = (mu + cfg.gap_sigma * gaussian(&mut rng)).max(0.05);
        let time_gap = if ego_first { -magnitude } else { magnitude };

        pairs.push(InteractionPair {
            rel_speed,
            angle,
            time_gap,
            ego,
            agent,
        });
    }
    Ok(pairs)
}
