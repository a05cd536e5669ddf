//! Interaction model: protection-time curves, constant-acceleration arrival
//! bounds, the overtake/give-way ability features, and the gated classifier
//! that turns them into a pass-first probability.

pub mod fit;
pub mod io;
pub mod mlp;

use crate::path::angle_between;
use mlp::Mlp;
use thiserror::Error;

/// Relative-speed domain the protection curves are valid on (m/s).
pub const REL_SPEED_DOMAIN: (f64, f64) = (-10.0, 10.0);

/// Features fed to the classifier are clamped to this magnitude; infinite
/// give-way ability (the competitor can always stop) saturates here.
pub const FEATURE_CLAMP: f64 = 100.0;

#[derive(Debug, Error)]
pub enum IpmError {
    #[error("protection curve `{curve}` loses its sign at input {input:.3} (value {value:.3})")]
    SignInvariant {
        curve: &'static str,
        input: f64,
        value: f64,
    },
    #[error("distance to an interaction point cannot be negative, got {0}")]
    NegativeDistance(f64),
    #[error("acceleration bounds must satisfy min < 0 < max, got ({min}, {max})")]
    BadAccelBounds { min: f64, max: f64 },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("training did not converge: final loss {loss:.4}, training accuracy {accuracy:.4}")]
    NoConvergence { loss: f64, accuracy: f64 },
    #[error("model file, line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Kinematic context of one agent approaching an interaction point.
#[derive(Debug, Clone, Copy)]
pub struct AgentKinematics {
    /// Current speed (m/s).
    pub speed: f64,
    /// Remaining distance along its path to the point (m).
    pub distance: f64,
    /// Maximum acceleration (m/s^2), positive.
    pub accel_max: f64,
    /// Maximum deceleration (m/s^2), negative.
    pub accel_min: f64,
}

/// One observed (or synthesized) encounter of two agents at a shared point.
///
/// `time_gap` is the signed difference of arrival times (ego minus agent) and
/// is never zero: two bodies cannot occupy the point simultaneously.
#[derive(Debug, Clone, Copy)]
pub struct InteractionPair {
    /// Relative passing speed, ego minus agent (m/s).
    pub rel_speed: f64,
    /// Angle between the paths at the point, in [0, pi].
    pub angle: f64,
    /// Signed arrival-time gap, ego minus agent (s); nonzero.
    pub time_gap: f64,
    pub ego: AgentKinematics,
    pub agent: AgentKinematics,
}

impl InteractionPair {
    /// Label used everywhere: `true` when the ego passed first.
    pub fn ego_first(&self) -> bool {
        self.time_gap < 0.0
    }
}

/// Evaluates a polynomial given coefficients highest-degree first.
pub fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Protection times for one encounter: the largest tolerable negative gap
/// when passing first and the smallest tolerable positive gap when yielding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtectionTimes {
    /// Negative bound: arrival-time gap must stay below this to pass first (s).
    pub overtake: f64,
    /// Positive bound: arrival-time gap must stay above this to yield (s).
    pub give_way: f64,
}

/// Fitted protection-time curves: a quartic in relative speed and a quadratic
/// in interaction angle for each side of the gap.
///
/// Coefficients are stored highest-degree first. Construction rejects any
/// curve whose sign flips anywhere on the declared input domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectionTimeModel {
    pub overtake_speed: [f64; 5],
    pub overtake_angle: [f64; 3],
    pub give_way_speed: [f64; 5],
    pub give_way_angle: [f64; 3],
}

impl ProtectionTimeModel {
    pub fn new(
        overtake_speed: [f64; 5],
        overtake_angle: [f64; 3],
        give_way_speed: [f64; 5],
        give_way_angle: [f64; 3],
    ) -> Result<Self, IpmError> {
        let model = ProtectionTimeModel {
            overtake_speed,
            overtake_angle,
            give_way_speed,
            give_way_angle,
        };
        model.validate_signs()?;
        Ok(model)
    }

    /// Constant curves, mostly useful for tests and bootstrap configurations.
    pub fn constant(overtake: f64, give_way: f64) -> Result<Self, IpmError> {
        Self::new(
            [0.0, 0.0, 0.0, 0.0, overtake],
            [0.0, 0.0, overtake],
            [0.0, 0.0, 0.0, 0.0, give_way],
            [0.0, 0.0, give_way],
        )
    }

    /// Dense sign check over the whole input domain.
    fn validate_signs(&self) -> Result<(), IpmError> {
        let speed_grid = |i: usize| {
            REL_SPEED_DOMAIN.0 + (REL_SPEED_DOMAIN.1 - REL_SPEED_DOMAIN.0) * (i as f64) / 400.0
        };
        let angle_grid = |i: usize| std::f64::consts::PI * (i as f64) / 400.0;
        for i in 0..=400 {
            let dv = speed_grid(i);
            let v = eval_poly(&self.overtake_speed, dv);
            if v >= 0.0 {
                return Err(IpmError::SignInvariant {
                    curve: "overtake(rel_speed)",
                    input: dv,
                    value: v,
                });
            }
            let v = eval_poly(&self.give_way_speed, dv);
            if v <= 0.0 {
                return Err(IpmError::SignInvariant {
                    curve: "give_way(rel_speed)",
                    input: dv,
                    value: v,
                });
            }
            let th = angle_grid(i);
            let v = eval_poly(&self.overtake_angle, th);
            if v >= 0.0 {
                return Err(IpmError::SignInvariant {
                    curve: "overtake(angle)",
                    input: th,
                    value: v,
                });
            }
            let v = eval_poly(&self.give_way_angle, th);
            if v <= 0.0 {
                return Err(IpmError::SignInvariant {
                    curve: "give_way(angle)",
                    input: th,
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Protection times for a given relative speed and interaction angle.
    ///
    /// Inputs are clamped to the fit domain; the overtake side takes the more
    /// negative of its two curves and the give-way side the more positive.
    pub fn protection_times(&self, rel_speed: f64, angle: f64) -> ProtectionTimes {
        let dv = rel_speed.clamp(REL_SPEED_DOMAIN.0, REL_SPEED_DOMAIN.1);
        let th = angle_between(angle, 0.0);
        ProtectionTimes {
            overtake: eval_poly(&self.overtake_speed, dv).min(eval_poly(&self.overtake_angle, th)),
            give_way: eval_poly(&self.give_way_speed, dv).max(eval_poly(&self.give_way_angle, th)),
        }
    }
}

/// Earliest and latest possible arrival times at a point, under constant
/// acceleration within the agent's bounds. `latest` is `f64::INFINITY` when
/// the agent can stop before ever reaching the point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalBounds {
    pub earliest: f64,
    pub latest: f64,
}

/// Constant-acceleration arrival window for an agent `distance` meters from
/// a point at `speed`, with acceleration limited to `[accel_min, accel_max]`.
///
/// The latest arrival caps the deceleration at the value that stops exactly
/// at the point; braking any harder means never arriving, which yields the
/// infinite sentinel when starting from standstill.
pub fn arrival_bounds(
    speed: f64,
    distance: f64,
    accel_max: f64,
    accel_min: f64,
) -> Result<ArrivalBounds, IpmError> {
    if distance < 0.0 {
        return Err(IpmError::NegativeDistance(distance));
    }
    if accel_max <= 0.0 || accel_min >= 0.0 {
        return Err(IpmError::BadAccelBounds {
            min: accel_min,
            max: accel_max,
        });
    }
    let v0 = speed.max(0.0);
    if distance == 0.0 {
        return Ok(ArrivalBounds {
            earliest: 0.0,
            latest: 0.0,
        });
    }
    let earliest = ((v0 * v0 + 2.0 * accel_max * distance).sqrt() - v0) / accel_max;
    let latest = if v0 <= 0.0 {
        f64::INFINITY
    } else {
        // Deceleration is capped so the agent still (just) reaches the point.
        let stop_limit = -v0 * v0 / (2.0 * distance);
        let a = accel_min.max(stop_limit);
        let disc = (v0 * v0 + 2.0 * a * distance).max(0.0);
        (v0 - disc.sqrt()) / a.abs()
    };
    Ok(ArrivalBounds { earliest, latest })
}

/// Ability features comparing the ego against one competitor at a point.
///
/// `overtake_ability` below zero means the ego can arrive earlier even after
/// paying the protection gap; `give_way_ability` below zero means the ego can
/// out-wait the competitor by the required margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbilityFeatures {
    pub overtake_ability: f64,
    pub give_way_ability: f64,
}

/// Computes the ability features from both arrival windows and the
/// protection times of the encounter.
///
/// An infinite competitor `latest` (the competitor can always yield) drives
/// the give-way ability to negative infinity: the ego can trivially give way.
pub fn priority_features(
    ego: ArrivalBounds,
    agent: ArrivalBounds,
    protection: ProtectionTimes,
) -> AbilityFeatures {
    let overtake_ability = ego.earliest - agent.earliest + protection.overtake.abs();
    let give_way_ability = if agent.latest.is_infinite() {
        f64::NEG_INFINITY
    } else if ego.latest.is_infinite() {
        f64::INFINITY
    } else {
        ego.latest - agent.latest - protection.give_way.abs()
    };
    AbilityFeatures {
        overtake_ability,
        give_way_ability,
    }
}

/// Gated classifier producing the probability that the ego passes first.
#[derive(Debug, Clone)]
pub struct PriorityClassifier {
    pub mlp: Mlp,
    /// Gate time slope over the ego arrival time.
    pub gate_slope: f64,
    /// Gate time offset (s).
    pub gate_offset: f64,
    /// Gate time cap (s).
    pub gate_cap: f64,
    /// Probability threshold the planner uses to pass a point.
    pub pass_threshold: f64,
}

impl PriorityClassifier {
    /// Hand-shaped classifier approximating the pass-first rule: the
    /// probability falls with the overtake ability and, more weakly, with
    /// the give-way ability. Useful as a bootstrap when no trained model
    /// file is at hand; training replaces it for any serious run.
    pub fn heuristic(gate: crate::config::GateParams) -> Self {
        use mlp::{Activation, Layer};
        let mut l1 = Layer {
            rows: 16,
            cols: 2,
            weights: vec![0.0; 32],
            bias: vec![0.0; 16],
            activation: Activation::Tanh,
        };
        l1.weights[0] = -0.5;
        l1.weights[1] = -0.15;
        l1.bias[0] = -0.5;
        let mut l2 = Layer {
            rows: 16,
            cols: 16,
            weights: vec![0.0; 256],
            bias: vec![0.0; 16],
            activation: Activation::Tanh,
        };
        l2.weights[0] = 2.0;
        let mut l3 = Layer {
            rows: 1,
            cols: 16,
            weights: vec![0.0; 16],
            bias: vec![0.0],
            activation: Activation::Sigmoid,
        };
        l3.weights[0] = 8.0;
        PriorityClassifier {
            mlp: Mlp {
                layers: vec![l1, l2, l3],
            },
            gate_slope: gate.slope,
            gate_offset: gate.offset,
            gate_cap: gate.cap,
            pass_threshold: gate.pass_threshold,
        }
    }

    /// The conservatism gate: with little time left before arrival only a
    /// clearly negative overtake ability may pass to the network at all.
    pub fn gate_time(&self, ego_arrival: f64) -> f64 {
        (self.gate_slope * ego_arrival + self.gate_offset).min(self.gate_cap)
    }

    /// Probability that the ego passes the point first.
    ///
    /// Exactly 0 whenever the overtake ability reaches the gate time,
    /// regardless of the network; otherwise the network output in [0, 1].
    pub fn priority_probability(&self, features: AbilityFeatures, ego_arrival: f64) -> f64 {
        debug_assert!(ego_arrival >= 0.0);
        if features.overtake_ability >= self.gate_time(ego_arrival) {
            return 0.0;
        }
        let x = [
            features.overtake_ability.clamp(-FEATURE_CLAMP, FEATURE_CLAMP),
            features.give_way_ability.clamp(-FEATURE_CLAMP, FEATURE_CLAMP),
        ];
        self.mlp.forward(&x)[0].clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use mlp::{Activation, Mlp};
    use proptest::prelude::*;

    #[test]
    fn constant_model_returns_its_constants() {
        let m = ProtectionTimeModel::constant(-1.5, 2.0).unwrap();
        let p = m.protection_times(3.7, 1.0);
        assert_eq!(p.overtake, -1.5);
        assert_eq!(p.give_way, 2.0);
    }

    #[test]
    fn sign_violating_curve_is_rejected() {
        // overtake(angle) = angle/pi + 1 is positive: must be rejected.
        let err = ProtectionTimeModel::new(
            [0.0, 0.0, 0.0, 0.0, -1.0],
            [0.0, 1.0 / std::f64::consts::PI, 1.0],
            [0.0, 0.0, 0.0, 0.0, 2.0],
            [0.0, 0.0, 2.0],
        );
        assert!(matches!(err, Err(IpmError::SignInvariant { .. })));
    }

    #[test]
    fn composition_takes_most_negative_and_most_positive() {
        let m = ProtectionTimeModel::new(
            [0.0, 0.0, -0.01, 0.0, -1.0], // more negative at high |dv|
            [0.0, -0.5, -0.8],
            [0.0, 0.0, 0.01, 0.0, 1.2],
            [0.0, 0.4, 0.9],
        )
        .unwrap();
        for dv in [-8.0, -2.0, 0.0, 3.0, 9.0] {
            for th in [0.1, 1.0, 2.5] {
                let p = m.protection_times(dv, th);
                let os = eval_poly(&m.overtake_speed, dv);
                let oa = eval_poly(&m.overtake_angle, th);
                let gs = eval_poly(&m.give_way_speed, dv);
                let ga = eval_poly(&m.give_way_angle, th);
                assert!(p.overtake <= os && p.overtake <= oa);
                assert!(p.give_way >= gs && p.give_way >= ga);
                assert!(p.overtake < 0.0 && p.give_way > 0.0);
            }
        }
    }

    /// Forward-integration oracle: arrival time at `distance` under constant
    /// acceleration, or None when the agent stops short.
    fn integrate_arrival(v0: f64, a: f64, distance: f64, dt: f64) -> Option<f64> {
        let mut s = 0.0;
        let mut v = v0;
        let mut t = 0.0;
        while t < 400.0 {
            if s >= distance {
                return Some(t);
            }
            if v <= 0.0 && a <= 0.0 {
                return None;
            }
            s += v * dt + 0.5 * a * dt * dt;
            v = (v + a * dt).max(0.0);
            t += dt;
        }
        None
    }

    #[test]
    fn earliest_arrival_matches_integration() {
        // v0 = 2, a_max = 1.5, d = 12 -> (sqrt(4 + 36) - 2) / 1.5.
        let b = arrival_bounds(2.0, 12.0, 1.5, -3.0).unwrap();
        let expected = ((2.0f64 * 2.0 + 2.0 * 1.5 * 12.0).sqrt() - 2.0) / 1.5;
        assert_abs_diff_eq!(b.earliest, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(b.earliest, 2.8830, epsilon = 5e-4);
        let oracle = integrate_arrival(2.0, 1.5, 12.0, 1e-4).unwrap();
        assert_abs_diff_eq!(b.earliest, oracle, epsilon = 1e-3);
    }

    #[test]
    fn zero_distance_means_zero_bounds() {
        let b = arrival_bounds(5.0, 0.0, 1.5, -3.0).unwrap();
        assert_eq!(b.earliest, 0.0);
        assert_eq!(b.latest, 0.0);
    }

    #[test]
    fn clamped_deceleration_gives_two_d_over_v() {
        // v0 = 4, a_min = -3, d = 12: braking is capped at -16/24 so the agent
        // stops exactly at the point; latest = 2 d / v0 = 6 s.
        let b = arrival_bounds(4.0, 12.0, 1.5, -3.0).unwrap();
        assert_abs_diff_eq!(b.latest, 6.0, epsilon = 1e-9);
        let a_eff = -(4.0f64 * 4.0) / (2.0 * 12.0);
        let oracle = integrate_arrival(4.0, a_eff, 12.0 - 1e-6, 1e-4).unwrap();
        assert_abs_diff_eq!(b.latest, oracle, epsilon = 2e-2);
    }

    #[test]
    fn standstill_far_from_the_point_never_has_to_arrive() {
        let b = arrival_bounds(0.0, 10.0, 1.5, -3.0).unwrap();
        assert!(b.latest.is_infinite());
        assert!(b.earliest > 0.0);
    }

    #[test]
    fn bounds_are_ordered() {
        for v0 in [0.0, 1.0, 4.0, 9.0] {
            for d in [0.0, 1.0, 7.0, 30.0] {
                let b = arrival_bounds(v0, d, 1.5, -3.0).unwrap();
                assert!(b.earliest >= 0.0);
                assert!(b.earliest <= b.latest);
            }
        }
    }

    #[test]
    fn negative_distance_is_rejected() {
        assert!(matches!(
            arrival_bounds(3.0, -1.0, 1.5, -3.0),
            Err(IpmError::NegativeDistance(_))
        ));
    }

    proptest! {
        #[test]
        fn earliest_monotone_in_accel_and_distance(
            v0 in 0.0..10.0f64,
            d in 0.5..50.0f64,
            a_lo in 0.5..1.4f64,
            extra in 0.1..2.0f64,
            d_extra in 0.1..10.0f64,
        ) {
            let lo = arrival_bounds(v0, d, a_lo, -3.0).unwrap();
            let hi = arrival_bounds(v0, d, a_lo + extra, -3.0).unwrap();
            prop_assert!(hi.earliest <= lo.earliest + 1e-12);
            let far = arrival_bounds(v0, d + d_extra, a_lo, -3.0).unwrap();
            prop_assert!(far.earliest >= lo.earliest - 1e-12);
        }

        #[test]
        fn overtake_ability_is_translation_invariant(
            te in 0.0..20.0f64,
            ti in 0.0..20.0f64,
            shift in 0.0..15.0f64,
        ) {
            let p = ProtectionTimes { overtake: -1.5, give_way: 2.0 };
            let base = priority_features(
                ArrivalBounds { earliest: te, latest: te + 5.0 },
                ArrivalBounds { earliest: ti, latest: ti + 5.0 },
                p,
            );
            let moved = priority_features(
                ArrivalBounds { earliest: te + shift, latest: te + 5.0 },
                ArrivalBounds { earliest: ti + shift, latest: ti + 5.0 },
                p,
            );
            prop_assert!((base.overtake_ability - moved.overtake_ability).abs() < 1e-9);
        }
    }

    #[test]
    fn ability_features_match_hand_arithmetic() {
        // earliest_e = 2, earliest_i = 5, overtake gap -1.5 -> -1.5 s.
        let f = priority_features(
            ArrivalBounds {
                earliest: 2.0,
                latest: 8.0,
            },
            ArrivalBounds {
                earliest: 5.0,
                latest: 9.0,
            },
            ProtectionTimes {
                overtake: -1.5,
                give_way: 2.0,
            },
        );
        assert_abs_diff_eq!(f.overtake_ability, -1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.give_way_ability, 8.0 - 9.0 - 2.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_agents_with_zero_protection_are_even() {
        let b = ArrivalBounds {
            earliest: 3.0,
            latest: 7.0,
        };
        let f = priority_features(
            b,
            b,
            ProtectionTimes {
                overtake: -0.0,
                give_way: 0.0,
            },
        );
        assert_eq!(f.overtake_ability, 0.0);
        assert_eq!(f.give_way_ability, 0.0);
    }

    #[test]
    fn infinite_competitor_latest_saturates_give_way_ability() {
        let f = priority_features(
            ArrivalBounds {
                earliest: 2.0,
                latest: 8.0,
            },
            ArrivalBounds {
                earliest: 5.0,
                latest: f64::INFINITY,
            },
            ProtectionTimes {
                overtake: -1.5,
                give_way: 2.0,
            },
        );
        assert!(f.give_way_ability == f64::NEG_INFINITY);
    }

    fn any_classifier(seed: u64) -> PriorityClassifier {
        PriorityClassifier {
            mlp: Mlp::random(
                &[2, 16, 16, 1],
                &[Activation::Tanh, Activation::Tanh, Activation::Sigmoid],
                seed,
            ),
            gate_slope: 0.5,
            gate_offset: 1.5,
            gate_cap: 5.0,
            pass_threshold: 0.95,
        }
    }

    #[test]
    fn gate_time_arithmetic_matches_constants() {
        let clf = any_classifier(1);
        assert_abs_diff_eq!(clf.gate_time(4.0), 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(clf.gate_time(20.0), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn gated_input_returns_exact_zero() {
        let clf = any_classifier(2);
        let f = AbilityFeatures {
            overtake_ability: 4.0,
            give_way_ability: -3.0,
        };
        // overtake ability 4.0 >= gate 3.5 at arrival 4 s.
        assert_eq!(clf.priority_probability(f, 4.0), 0.0);
    }

    #[test]
    fn ungated_output_is_a_probability() {
        for seed in 0..20 {
            let clf = any_classifier(seed);
            let f = AbilityFeatures {
                overtake_ability: -5.0,
                give_way_ability: 1.0,
            };
            let p = clf.priority_probability(f, 10.0);
            assert!((0.0..=1.0).contains(&p));
        }
    }
}
