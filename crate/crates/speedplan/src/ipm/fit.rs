//! Fits the protection-time curves from interaction-pair data: per-bin
//! Gaussian envelopes of the time gap, then polynomial least squares.

use super::{InteractionPair, IpmError, ProtectionTimeModel, REL_SPEED_DOMAIN};
use crate::config::FitParams;

/// Which side and regressor a fitted curve belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveId {
    OvertakeSpeed,
    OvertakeAngle,
    GiveWaySpeed,
    GiveWayAngle,
}

impl CurveId {
    pub const ALL: [CurveId; 4] = [
        CurveId::OvertakeSpeed,
        CurveId::OvertakeAngle,
        CurveId::GiveWaySpeed,
        CurveId::GiveWayAngle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CurveId::OvertakeSpeed => "overtake(rel_speed)",
            CurveId::OvertakeAngle => "overtake(angle)",
            CurveId::GiveWaySpeed => "give_way(rel_speed)",
            CurveId::GiveWayAngle => "give_way(angle)",
        }
    }
}

/// Per-curve fit diagnostics: the envelope points that were fitted and the
/// root-mean-square residual of the polynomial against them.
#[derive(Debug, Clone, Default)]
pub struct CurveReport {
    /// (bin center, envelope value) pairs, in bin order.
    pub envelope: Vec<(f64, f64)>,
    pub rms_residual: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub curves: [CurveReport; 4],
    pub sigma_level: f64,
    pub bin_width_dv: f64,
    pub bin_width_dtheta: f64,
}

/// Mean and sample standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Envelope points over one regressor: bins the samples, then takes
/// `mean + sign * sigma_level * std` per sufficiently populated bin.
fn envelope_points(
    samples: &[(f64, f64)], // (regressor, time gap)
    lo: f64,
    hi: f64,
    width: f64,
    min_count: usize,
    sigma_level: f64,
    toward_zero_sign: f64,
) -> Vec<(f64, f64)> {
    let nbins = ((hi - lo) / width).ceil() as usize;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); nbins.max(1)];
    for &(x, gap) in samples {
        let i = (((x - lo) / width).floor() as isize).clamp(0, nbins as isize - 1) as usize;
        bins[i].push(gap);
    }
    bins.iter()
        .enumerate()
        .filter(|(_, b)| b.len() >= min_count.max(2))
        .map(|(i, b)| {
            let (mean, std) = mean_std(b);
            let center = lo + (i as f64 + 0.5) * width;
            (center, mean + toward_zero_sign * sigma_level * std)
        })
        .collect()
}

/// Least-squares polynomial fit by Householder QR, coefficients
/// highest-degree first. The regressor is rescaled to [-1, 1] internally.
pub fn polyfit(points: &[(f64, f64)], degree: usize) -> Result<Vec<f64>, IpmError> {
    let n = degree + 1;
    if points.len() < n {
        return Err(IpmError::InsufficientData(format!(
            "{} envelope bins cannot determine {} coefficients",
            points.len(),
            n
        )));
    }
    let scale = points
        .iter()
        .map(|(x, _)| x.abs())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let m = points.len();
    let mut a: Vec<f64> = Vec::with_capacity(m * n); // row-major
    let mut b: Vec<f64> = Vec::with_capacity(m);
    for &(x, y) in points {
        let u = x / scale;
        for p in (0..n).rev() {
            a.push(u.powi(p as i32));
        }
        b.push(y);
    }

    // Householder QR with implicit application to b.
    for k in 0..n {
        let mut norm = 0.0;
        for i in k..m {
            norm += a[i * n + k] * a[i * n + k];
        }
        let norm = norm.sqrt();
        if norm < 1e-14 {
            return Err(IpmError::InsufficientData(
                "degenerate regressor layout in polynomial fit".into(),
            ));
        }
        let alpha = if a[k * n + k] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; m - k];
        v[0] = a[k * n + k] - alpha;
        for i in k + 1..m {
            v[i - k] = a[i * n + k];
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv > 1e-28 {
            for j in k..n {
                let mut dot = 0.0;
                for i in k..m {
                    dot += v[i - k] * a[i * n + j];
                }
                let f = 2.0 * dot / vtv;
                for i in k..m {
                    a[i * n + j] -= f * v[i - k];
                }
            }
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * b[i];
            }
            let f = 2.0 * dot / vtv;
            for i in k..m {
                b[i] -= f * v[i - k];
            }
        }
        a[k * n + k] = alpha;
    }

    // Back substitution on the upper-triangular system.
    let mut coeffs = vec![0.0; n];
    for k in (0..n).rev() {
        let mut sum = b[k];
        for j in k + 1..n {
            sum -= a[k * n + j] * coeffs[j];
        }
        coeffs[k] = sum / a[k * n + k];
    }

    // Undo the regressor rescaling: the coefficient of x^p picks up scale^-p.
    for (j, c) in coeffs.iter_mut().enumerate() {
        let p = (degree - j) as i32;
        *c /= scale.powi(p);
    }
    Ok(coeffs)
}

fn rms_residual(points: &[(f64, f64)], coeffs: &[f64]) -> f64 {
    let ss: f64 = points
        .iter()
        .map(|&(x, y)| {
            let e = super::eval_poly(coeffs, x) - y;
            e * e
        })
        .sum();
    (ss / points.len() as f64).sqrt()
}

/// Fits all four protection curves from labeled interaction pairs.
///
/// The time-gap samples are split by sign; each population is binned over
/// relative speed and over interaction angle, the per-bin Gaussian envelope
/// (`mean ± sigma_level * std`, toward zero) is computed, and a quartic
/// (speed) or quadratic (angle) is fitted to the envelope points. The
/// resulting model must satisfy the sign invariant over the whole domain.
pub fn fit_protection_model(
    pairs: &[InteractionPair],
    cfg: &FitParams,
) -> Result<(ProtectionTimeModel, FitReport), IpmError> {
    let neg: Vec<&InteractionPair> = pairs.iter().filter(|p| p.time_gap < 0.0).collect();
    let pos: Vec<&InteractionPair> = pairs.iter().filter(|p| p.time_gap > 0.0).collect();
    if neg.len() < 50 || pos.len() < 50 {
        return Err(IpmError::InsufficientData(format!(
            "need at least 50 samples per curve, got {} overtaking / {} yielding",
            neg.len(),
            pos.len()
        )));
    }

    let by_speed = |set: &[&InteractionPair]| -> Vec<(f64, f64)> {
        set.iter().map(|p| (p.rel_speed, p.time_gap)).collect()
    };
    let by_angle = |set: &[&InteractionPair]| -> Vec<(f64, f64)> {
        set.iter().map(|p| (p.angle, p.time_gap)).collect()
    };

    let (lo, hi) = REL_SPEED_DOMAIN;
    let mk = |samples: Vec<(f64, f64)>, lo: f64, hi: f64, width: f64, sign: f64, degree: usize| {
        let pts = envelope_points(
            &samples,
            lo,
            hi,
            width,
            cfg.min_bin_count,
            cfg.sigma_level,
            sign,
        );
        let coeffs = polyfit(&pts, degree)?;
        let report = CurveReport {
            rms_residual: rms_residual(&pts, &coeffs),
            samples: samples.len(),
            envelope: pts,
        };
        Ok::<_, IpmError>((coeffs, report))
    };

    // Negative gaps: the envelope edge closest to zero is mean + k*std.
    let (c1, r1) = mk(by_speed(&neg), lo, hi, cfg.bin_width_dv, 1.0, 4)?;
    let (c2, r2) = mk(
        by_angle(&neg),
        0.0,
        std::f64::consts::PI,
        cfg.bin_width_dtheta,
        1.0,
        2,
    )?;
    // Positive gaps: closest to zero is mean - k*std.
    let (c3, r3) = mk(by_speed(&pos), lo, hi, cfg.bin_width_dv, -1.0, 4)?;
    let (c4, r4) = mk(
        by_angle(&pos),
        0.0,
        std::f64::consts::PI,
        cfg.bin_width_dtheta,
        -1.0,
        2,
    )?;

    let model = ProtectionTimeModel::new(
        c1.try_into().expect("quartic fit yields 5 coefficients"),
        c2.try_into().expect("quadratic fit yields 3 coefficients"),
        c3.try_into().expect("quartic fit yields 5 coefficients"),
        c4.try_into().expect("quadratic fit yields 3 coefficients"),
    )?;
    Ok((
        model,
        FitReport {
            curves: [r1, r2, r3, r4],
            sigma_level: cfg.sigma_level,
            bin_width_dv: cfg.bin_width_dv,
            bin_width_dtheta: cfg.bin_width_dtheta,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipm::{eval_poly, AgentKinematics};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn pair(rel_speed: f64, angle: f64, gap: f64) -> InteractionPair {
        let k = AgentKinematics {
            speed: 5.0,
            distance: 20.0,
            accel_max: 1.5,
            accel_min: -3.0,
        };
        InteractionPair {
            rel_speed,
            angle,
            time_gap: gap,
            ego: k,
            agent: k,
        }
    }

    #[test]
    fn polyfit_recovers_exact_quadratic() {
        let coeffs = [-0.3, 0.2, -1.1];
        let pts: Vec<(f64, f64)> = (0..18)
            .map(|i| {
                let x = (i as f64 + 0.5) * PI / 18.0;
                (x, eval_poly(&coeffs, x))
            })
            .collect();
        let fit = polyfit(&pts, 2).unwrap();
        for (a, b) in fit.iter().zip(&coeffs) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_quadratic_envelope_round_trips_through_the_fitter() {
        // All samples sit exactly on a known quadratic at bin centers with
        // zero spread, so the envelope equals the curve and the fit is exact.
        let neg = [-0.3, 0.2, -1.1];
        let pos = [0.25, -0.1, 1.2];
        let cfg = FitParams {
            sigma_level: 3.0,
            bin_width_dv: 0.5,
            bin_width_dtheta: PI / 18.0,
            min_bin_count: 5,
        };
        let mut pairs = Vec::new();
        for i in 0..18 {
            let th = (i as f64 + 0.5) * cfg.bin_width_dtheta;
            for _ in 0..6 {
                pairs.push(pair(0.0, th, eval_poly(&neg, th)));
                pairs.push(pair(0.0, th, eval_poly(&pos, th)));
            }
        }
        // Speed-curve coverage has to stay on the angle quadratics too, and
        // at an exact angle-bin center, or it would perturb the angle bins.
        let th_cover = 2.5 * cfg.bin_width_dtheta;
        for i in 0..40 {
            let dv = -10.0 + (i as f64 + 0.5) * 0.5;
            for _ in 0..6 {
                pairs.push(pair(dv, th_cover, eval_poly(&neg, th_cover)));
                pairs.push(pair(dv, th_cover, eval_poly(&pos, th_cover)));
            }
        }
        let (model, _) = fit_protection_model(&pairs, &cfg).unwrap();
        for (a, b) in model.overtake_angle.iter().zip(&neg) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        for (a, b) in model.give_way_angle.iter().zip(&pos) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_sigma_envelope_equals_bin_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<(f64, f64)> = (0..500)
            .map(|_| (rng.gen_range(0.0..PI), -2.0 + rng.gen_range(-0.5..0.5)))
            .collect();
        let pts = envelope_points(&samples, 0.0, PI, PI / 18.0, 5, 0.0, 1.0);
        for &(center, value) in &pts {
            let bin: Vec<f64> = samples
                .iter()
                .filter(|(x, _)| (x - center).abs() <= PI / 36.0 + 1e-12)
                .map(|&(_, y)| y)
                .collect();
            let mean = bin.iter().sum::<f64>() / bin.len() as f64;
            assert_abs_diff_eq!(value, mean, epsilon = 1e-9);
        }
    }

    #[test]
    fn gaussian_three_sigma_envelope_lands_near_mu_minus_three_sigma() {
        // Gaps at Normal(-2.5, 0.3) and Normal(+2.5, 0.3): the fitted constant
        // terms should approach -(2.5 - 0.9) and +(2.5 - 0.9).
        let cfg = FitParams {
            sigma_level: 3.0,
            bin_width_dv: 0.5,
            bin_width_dtheta: PI / 18.0,
            min_bin_count: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut gauss = move || {
            // Box-Muller.
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
        };
        let mut rng2 = ChaCha8Rng::seed_from_u64(78);
        let mut pairs = Vec::new();
        for _ in 0..20_000 {
            let dv = rng2.gen_range(-9.9..9.9);
            let th = rng2.gen_range(0.01..PI - 0.01);
            pairs.push(pair(dv, th, -2.5 + 0.3 * gauss()));
            pairs.push(pair(dv, th, 2.5 + 0.3 * gauss()));
        }
        let (model, report) = fit_protection_model(&pairs, &cfg).unwrap();

        // Direct empirical oracle: per-bin mean + 3*std over the angle bins.
        let neg_samples: Vec<(f64, f64)> = pairs
            .iter()
            .filter(|p| p.time_gap < 0.0)
            .map(|p| (p.angle, p.time_gap))
            .collect();
        let oracle = envelope_points(&neg_samples, 0.0, PI, PI / 18.0, 5, 3.0, 1.0);
        for &(center, value) in &oracle {
            let fitted = eval_poly(&model.overtake_angle, center);
            assert!(
                (fitted - value).abs() < 0.15,
                "angle bin {center:.2}: fit {fitted:.3} vs oracle {value:.3}"
            );
        }
        // Constant terms near the analytic envelope.
        assert_abs_diff_eq!(model.overtake_angle[2], -1.6, epsilon = 0.15);
        assert_abs_diff_eq!(model.give_way_angle[2], 1.6, epsilon = 0.15);
        for c in &report.curves {
            assert!(c.rms_residual < 0.1, "residual {}", c.rms_residual);
        }
    }

    #[test]
    fn missing_population_is_an_insufficient_data_error() {
        let pairs: Vec<InteractionPair> = (0..200).map(|_| pair(0.0, 1.0, -2.0)).collect();
        let cfg = FitParams {
            sigma_level: 3.0,
            bin_width_dv: 0.5,
            bin_width_dtheta: PI / 18.0,
            min_bin_count: 5,
        };
        assert!(matches!(
            fit_protection_model(&pairs, &cfg),
            Err(IpmError::InsufficientData(_))
        ));
    }
}
