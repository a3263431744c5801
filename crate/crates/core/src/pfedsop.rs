//! Personalized gradient aggregation and the second-order model update.
//!
//! A client blends its latest local gradient update with the global one
//! using a weight derived from the angle between them (Gompertz-normalized),
//! then takes a curvature-scaled step: the blended update is pushed through
//! the inverse of its rank-one regularized outer-product approximation of
//! the Fisher information matrix, evaluated in closed form so no matrix is
//! ever materialized.

use crate::error::{Error, Result};
use crate::numkit::{angle_from_similarity, cosine_similarity, ParamVector};

/// Diagnostics from one personalization step.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizationReport {
    /// Cosine similarity between the local and global gradient updates.
    pub sim: f64,
    /// Angle between them, radians in [0, pi].
    pub theta: f64,
    /// Aggregation weight given to the global update, in (0, 1).
    pub beta: f64,
    /// Norm of the applied second-order step.
    pub step_norm: f64,
}

/// Gompertz normalization of the angle: `1 - exp(-exp(-lambda * (theta - 1)))`.
///
/// Strictly decreasing in `theta`; at `theta = 1` the weight is `1 - 1/e`
/// for every `lambda`.
pub fn gompertz_weight(theta: f64, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::parameter(
            "lambda",
            format!("must be > 0, got {lambda}"),
        ));
    }
    let inner = (-lambda * (theta - 1.0)).exp();
    // 1 - exp(-inner), via expm1 so small weights keep full precision.
    Ok(-(-inner).exp_m1())
}

/// Weighted blend of the local and global gradient updates:
/// `(1 - beta) * local + beta * global`.
pub fn personalized_update(
    delta_local: &ParamVector,
    delta_global: &ParamVector,
    beta: f64,
) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::parameter(
            "beta",
            format!("must lie in [0, 1], got {beta}"),
        ));
    }
    if delta_local.len() != delta_global.len() {
        return Err(Error::Dimension {
            left: delta_local.len(),
            right: delta_global.len(),
        });
    }
    let out: Vec<f64> = delta_local
        .as_slice()
        .iter()
        .zip(delta_global.as_slice())
        .map(|(l, g)| (1.0 - beta) * l + beta * g)
        .collect();
    Ok(ParamVector::new(out))
}

/// Second-order step through the rank-one regularized curvature
/// `delta delta^T + rho I`, inverted in closed form:
///
/// `step = delta/rho - delta * (delta^T delta) / (rho^2 + rho * delta^T delta)`
///
/// No matrix is formed; the result is collinear with `delta` and equals
/// `delta / (rho + ||delta||^2)` algebraically.
pub fn fim_step(delta_p: &ParamVector, rho: f64) -> Result<ParamVector> {
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::parameter("rho", format!("must be > 0, got {rho}")));
    }
    let s = delta_p.dot(delta_p)?;
    let denom = rho * rho + rho * s;
    let out: Vec<f64> = delta_p
        .as_slice()
        .iter()
        .map(|d| d / rho - d * s / denom)
        .collect();
    Ok(ParamVector::new(out))
}

/// Full personalization chain: similarity -> angle -> Gompertz weight ->
/// blended update -> second-order step -> model update
/// `x_new = x_prev - eta1 * step`.
pub fn personalize_model(
    x_prev: &ParamVector,
    delta_local: &ParamVector,
    delta_global: &ParamVector,
    eta1: f64,
    rho: f64,
    lambda: f64,
) -> Result<(ParamVector, PersonalizationReport)> {
    if !eta1.is_finite() || eta1 <= 0.0 {
        return Err(Error::parameter("eta1", format!("must be > 0, got {eta1}")));
    }
    let sim = cosine_similarity(delta_local, delta_global)?;
    let theta = angle_from_similarity(sim)?;
    let beta = gompertz_weight(theta, lambda)?;
    let blended = personalized_update(delta_local, delta_global, beta)?;
    let step = fim_step(&blended, rho)?;
    let mut x_new = x_prev.clone();
    x_new.add_scaled(&step, -eta1)?;
    let report = PersonalizationReport {
        sim,
        theta,
        beta,
        step_norm: step.l2_norm(),
    };
    Ok((x_new, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;
    use proptest::prelude::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec())
    }

    #[test]
    fn gompertz_fixed_point_is_lambda_free() {
        let expect = 1.0 - (-1.0f64).exp();
        for lambda in [0.5, 1.0, 2.5, 5.0] {
            let beta = gompertz_weight(1.0, lambda).unwrap();
            assert!((beta - expect).abs() < 1e-12, "lambda {lambda}: {beta}");
        }
    }

    #[test]
    fn gompertz_endpoint_values() {
        // Frozen from direct scalar evaluation of the double exponential.
        let beta0 = gompertz_weight(0.0, 1.0).unwrap();
        assert!((beta0 - 0.934012).abs() < 1e-6);
        let beta_pi = gompertz_weight(std::f64::consts::PI, 1.0).unwrap();
        assert!((beta_pi - 0.110831).abs() < 1e-6);
    }

    #[test]
    fn gompertz_rejects_nonpositive_lambda() {
        assert!(gompertz_weight(1.0, 0.0).is_err());
        assert!(gompertz_weight(1.0, -2.0).is_err());
    }

    #[test]
    fn gompertz_is_strictly_decreasing_on_grid() {
        // Strict decrease holds exactly; in doubles the weight rounds to 1.0
        // once exp(-lambda*(theta-1)) exceeds ~36.7 (lambda = 5 near theta 0),
        // so strictness is asserted below that saturation plateau and
        // non-increase everywhere.
        for lambda in [0.5, 1.0, 2.5, 5.0] {
            let mut prev = f64::INFINITY;
            for i in 0..1000 {
                let theta = std::f64::consts::PI * i as f64 / 999.0;
                let beta = gompertz_weight(theta, lambda).unwrap();
                assert!(beta <= prev, "lambda {lambda}, grid point {i}");
                if prev < 1.0 - 1e-15 {
                    assert!(beta < prev, "lambda {lambda}, grid point {i}");
                }
                assert!(beta > 0.0 && beta <= 1.0);
                if lambda <= 2.5 {
                    assert!(beta < 1.0, "no saturation expected for lambda {lambda}");
                }
                prev = beta;
            }
        }
    }

    #[test]
    fn gompertz_saturates_only_at_steep_lambda_near_zero_angle() {
        assert_eq!(gompertz_weight(0.0, 5.0).unwrap(), 1.0);
        assert!(gompertz_weight(0.3, 5.0).unwrap() < 1.0);
        assert!(gompertz_weight(0.0, 2.5).unwrap() < 1.0);
        // expm1 keeps the small-weight end well away from zero.
        let tail = gompertz_weight(std::f64::consts::PI, 50.0).unwrap();
        assert!(tail > 0.0 && tail < 1e-40);
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let local = pv(&[4.0, 0.0]);
        let global = pv(&[0.0, 8.0]);
        assert_eq!(personalized_update(&local, &global, 0.0).unwrap(), local);
        assert_eq!(personalized_update(&local, &global, 1.0).unwrap(), global);
        assert_eq!(
            personalized_update(&local, &global, 0.25).unwrap(),
            pv(&[3.0, 2.0])
        );
        assert!(personalized_update(&local, &pv(&[1.0]), 0.5).is_err());
        assert!(personalized_update(&local, &global, 1.5).is_err());
    }

    #[test]
    fn fim_step_known_values() {
        // 2-d case checked against the dense rank-one-plus-identity solve.
        let out = fim_step(&pv(&[3.0, 4.0]), 1.0).unwrap();
        assert!((out[0] - 3.0 / 26.0).abs() < 1e-12);
        assert!((out[1] - 4.0 / 26.0).abs() < 1e-12);

        let zero = fim_step(&pv(&[0.0, 0.0, 0.0]), 2.0).unwrap();
        assert_eq!(zero.as_slice(), &[0.0, 0.0, 0.0]);

        let out = fim_step(&pv(&[1.0, 0.0, 0.0]), 0.5).unwrap();
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(out[1], 0.0);

        assert!(fim_step(&pv(&[1.0]), 0.0).is_err());
        assert!(fim_step(&pv(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn fim_step_collinear_with_closed_form() {
        let mut rng = RngStream::new(3, "collinear", 0, 0);
        for case in 0..100 {
            let d = 1 + rng.below(1000);
            let scale = 10f64.powf(rng.uniform_in(-3.0, 0.5));
            let delta = ParamVector::new(
                (0..d).map(|_| rng.normal() * scale / (d as f64).sqrt()).collect(),
            );
            let rho = 10f64.powf(rng.uniform_in(-1.0, 0.0));
            let out = fim_step(&delta, rho).unwrap();
            let coeff = 1.0 / (rho + delta.dot(&delta).unwrap());
            for (o, d) in out.as_slice().iter().zip(delta.as_slice()) {
                let expect = d * coeff;
                let denom = expect.abs().max(1e-300);
                assert!(
                    (o - expect).abs() / denom < 1e-12,
                    "case {case}: {o} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn personalize_identical_updates_ignores_beta() {
        let x = pv(&[1.0, -2.0]);
        let delta = pv(&[0.6, 0.8]);
        let (x_new, report) = personalize_model(&x, &delta, &delta, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(report.theta, 0.0);
        // Step must equal delta / (rho + ||delta||^2) = delta / 2.
        assert!((x_new[0] - (1.0 - 0.3)).abs() < 1e-12);
        assert!((x_new[1] - (-2.0 - 0.4)).abs() < 1e-12);

        // Same outcome for any lambda because the blend of identical
        // vectors is beta-free.
        let (x_other, _) = personalize_model(&x, &delta, &delta, 1.0, 1.0, 4.2).unwrap();
        for (a, b) in x_new.as_slice().iter().zip(x_other.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn personalize_scalar_trace_step() {
        // 1-d quadratic with unit local and global updates: the first
        // personalized step halves the iterate.
        let (x_new, report) =
            personalize_model(&pv(&[1.0]), &pv(&[1.0]), &pv(&[1.0]), 1.0, 1.0, 1.0).unwrap();
        assert!((x_new[0] - 0.5).abs() < 1e-12);
        assert_eq!(report.theta, 0.0);
        assert!((report.step_norm - 0.5).abs() < 1e-12);
    }

    #[test]
    fn personalize_vanishing_updates_is_fixed_point() {
        let x = pv(&[0.3, -0.7, 2.0]);
        let zero = ParamVector::zeros(3);
        let (x_new, report) = personalize_model(&x, &zero, &zero, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(x_new, x);
        assert_eq!(report.sim, 0.0);
        assert!((report.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(report.step_norm, 0.0);
    }

    #[test]
    fn geometry_is_invariant_under_positive_scaling() {
        let mut rng = RngStream::new(9, "scaling", 0, 0);
        for _ in 0..20 {
            let d = 2 + rng.below(30);
            let local = ParamVector::new((0..d).map(|_| rng.normal()).collect());
            let global = ParamVector::new((0..d).map(|_| rng.normal()).collect());
            let x = ParamVector::zeros(d);
            let c = 10f64.powf(rng.uniform_in(-2.0, 2.0));
            let (_, base) = personalize_model(&x, &local, &global, 1.0, 1.0, 1.0).unwrap();
            let (_, scaled) =
                personalize_model(&x, &local.scale(c), &global.scale(c), 1.0, 1.0, 1.0).unwrap();
            assert!((base.sim - scaled.sim).abs() < 1e-12);
            assert!((base.theta - scaled.theta).abs() < 1e-12);
            assert!((base.beta - scaled.beta).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn blend_stays_on_segment(
            l in proptest::collection::vec(-100.0f64..100.0, 1..16),
            beta in 0.0f64..=1.0,
            shift in -100.0f64..100.0,
        ) {
            let local = ParamVector::new(l.clone());
            let global = ParamVector::new(l.iter().map(|v| v + shift).collect());
            let blended = personalized_update(&local, &global, beta).unwrap();
            for i in 0..l.len() {
                let lo = local[i].min(global[i]) - 1e-9;
                let hi = local[i].max(global[i]) + 1e-9;
                prop_assert!(blended[i] >= lo && blended[i] <= hi);
            }
        }

        #[test]
        fn gompertz_stays_in_open_unit_interval(
            theta in 0.0f64..=std::f64::consts::PI,
            lambda in 0.01f64..3.5,
        ) {
            // lambda capped below the double-precision saturation point.
            let beta = gompertz_weight(theta, lambda).unwrap();
            prop_assert!(beta > 0.0 && beta < 1.0);
        }
    }
}
