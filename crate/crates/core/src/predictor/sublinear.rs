use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::refine::{refine, weighted_sse, Curve, Point};
use super::{check_history, weighted_points, weighted_rms, CurveParams, FitConfig, FittedModel};
use crate::error::FitError;
use crate::loss::LossHistory;

/// `g(k) = 1 / (a·k² + b·k + c) + d`; `d` is the asymptote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublinearFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl SublinearFit {
    pub fn denominator(&self, k: f64) -> f64 {
        (self.a * k + self.b) * k + self.c
    }

    pub fn eval(&self, k: f64) -> f64 {
        1.0 / self.denominator(k) + self.d
    }

    pub(crate) fn into_model(self, history: &LossHistory, cfg: &FitConfig) -> FittedModel {
        let points = weighted_points(history, cfg.decay);
        let sse: f64 = points
            .iter()
            .map(|p| p.w * (self.eval(p.k) - p.y).powi(2))
            .sum();
        FittedModel {
            params: CurveParams::Sublinear(self),
            weighted_rms_residual: weighted_rms(sse, &points),
            n_points: history.len(),
        }
    }
}

/// The curve in coordinates shifted to the oldest fitted iteration, where the
/// feasibility constraints become simple bounds: a ≥ 0 and b ≥ 0 keep the
/// denominator non-decreasing from the shift point on, c > 0 keeps it
/// positive. Parameter order is [a, b, c, d].
struct Shifted {
    origin: f64,
}

impl Shifted {
    fn denominator(&self, p: &Vector4<f64>, k: f64) -> f64 {
        let u = k - self.origin;
        (p[0] * u + p[1]) * u + p[2]
    }

    fn to_absolute(&self, p: &Vector4<f64>) -> SublinearFit {
        let k0 = self.origin;
        SublinearFit {
            a: p[0],
            b: p[1] - 2.0 * p[0] * k0,
            c: (p[0] * k0 - p[1]) * k0 + p[2],
            d: p[3],
        }
    }
}

impl Curve<4> for Shifted {
    fn value(&self, p: &Vector4<f64>, k: f64) -> f64 {
        1.0 / self.denominator(p, k) + p[3]
    }

    fn gradient(&self, p: &Vector4<f64>, k: f64) -> Vector4<f64> {
        let u = k - self.origin;
        let inv = 1.0 / self.denominator(p, k);
        let g = -inv * inv;
        Vector4::new(g * u * u, g * u, g, 1.0)
    }

    fn project(&self, mut p: Vector4<f64>) -> Option<Vector4<f64>> {
        p[0] = p[0].max(0.0);
        p[1] = p[1].max(0.0);
        if p[2] > 0.0 && p.iter().all(|v| v.is_finite()) {
            Some(p)
        } else {
            None
        }
    }
}

/// Fits `g(k) = 1/(a·k² + b·k + c) + d` by weighted least squares.
///
/// The starting point puts the asymptote 10% of the observed range below the
/// minimum loss, then solves the linearized problem `1/(loss − d) ≈ a·k² +
/// b·k + c` in closed form before refinement.
pub fn fit_sublinear(history: &LossHistory, cfg: &FitConfig) -> Result<SublinearFit, FitError> {
    check_history(history, cfg)?;
    let points = weighted_points(history, cfg.decay);
    let curve = Shifted {
        origin: points[0].k,
    };
    let init = initial_guess(&curve, &points, history);
    let init = curve.project(init).ok_or(FitError::Infeasible(
        "initial denominator is not positive",
    ))?;
    let (p, sse) = refine(
        &curve,
        init,
        &points,
        cfg.max_refine_steps,
        cfg.refine_tolerance,
    );
    if !sse.is_finite() || curve.project(p).is_none() {
        return Err(FitError::Infeasible("denominator is not positive"));
    }
    debug_assert!(weighted_sse(&curve, &p, &points).is_finite());
    Ok(curve.to_absolute(&p))
}

fn initial_guess(curve: &Shifted, points: &[Point], history: &LossHistory) -> Vector4<f64> {
    let min = history.min_loss().expect("history is non-empty");
    let d0 = min - 0.1 * history.observed_range();
    let span = (points.last().unwrap().k - curve.origin).max(1.0);

    // Solve in v = u / span so the normal matrix stays well conditioned.
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for pt in points {
        let v = (pt.k - curve.origin) / span;
        let basis = Vector3::new(v * v, v, 1.0);
        let y = 1.0 / (pt.y - d0);
        normal.syger(pt.w, &basis, &basis, 1.0);
        rhs.axpy(pt.w * y, &basis, 1.0);
    }
    let first_y = 1.0 / (points[0].y - d0);
    let (a, b, c) = match normal.cholesky().map(|ch| ch.solve(&rhs)) {
        Some(q) if q.iter().all(|v| v.is_finite()) => (q[0] / (span * span), q[1] / span, q[2]),
        _ => (0.0, 0.0, first_y),
    };
    let (a, b) = (a.max(0.0), b.max(0.0));
    let c = if c > 0.0 { c } else { first_y };
    Vector4::new(a, b, c, d0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history_from(f: impl Fn(f64) -> f64, n: usize) -> LossHistory {
        let losses: Vec<f64> = (0..n).map(|k| f(k as f64)).collect();
        LossHistory::from_losses(&losses)
    }

    #[test]
    fn recovers_harmonic_curve() {
        let truth = |k: f64| 1.0 / (k + 1.0);
        let h = history_from(truth, 10);
        let fit = fit_sublinear(&h, &FitConfig::default()).unwrap();
        for k in 0..20 {
            let k = k as f64;
            let rel = (fit.eval(k) - truth(k)).abs() / truth(k);
            assert!(rel < 1e-6, "k={k} rel={rel} fit={fit:?}");
        }
    }

    #[test]
    fn extrapolates_quadratic_denominator() {
        let truth = |k: f64| 1.0 / (0.5 * k * k + 1.0) + 0.2;
        let h = history_from(truth, 10);
        let fit = fit_sublinear(&h, &FitConfig::default()).unwrap();
        let expected = truth(19.0);
        assert!((expected - 0.205_509_641_873_278_2).abs() < 1e-12);
        assert!((fit.eval(19.0) - expected).abs() < 1e-4, "{fit:?}");
    }

    #[test]
    fn short_history_is_rejected() {
        let h = history_from(|k| 1.0 / (k + 1.0), 3);
        assert!(matches!(
            fit_sublinear(&h, &FitConfig::default()),
            Err(FitError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn constant_history_is_degenerate() {
        let h = history_from(|_| 0.7, 10);
        assert_eq!(
            fit_sublinear(&h, &FitConfig::default()),
            Err(FitError::DegenerateHistory)
        );
    }

    #[test]
    fn fitted_curve_is_non_increasing() {
        // Noisy, non-monotone input still yields a monotone curve.
        let losses = [5.0, 3.1, 2.6, 2.7, 2.2, 2.25, 2.0, 2.05, 1.9, 1.95];
        let h = LossHistory::from_losses(&losses);
        let fit = fit_sublinear(&h, &FitConfig::default()).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..400 {
            let v = fit.eval(i as f64 * 0.25);
            assert!(v <= prev + 1e-12);
            prev = v;
        }
        assert!(fit.a >= 0.0);
    }

    #[test]
    fn fitting_is_deterministic() {
        let h = history_from(|k| 3.0 / (0.2 * k * k + 0.7 * k + 1.0) + 0.4, 25);
        let cfg = FitConfig::default();
        let a = fit_sublinear(&h, &cfg).unwrap();
        let b = fit_sublinear(&h, &cfg).unwrap();
        assert_eq!(a.a.to_bits(), b.a.to_bits());
        assert_eq!(a.d.to_bits(), b.d.to_bits());
    }
}
