//! Damped Gauss–Newton refinement for small weighted least-squares problems.
//!
//! The damping term is scaled by the diagonal of the normal matrix (Marquardt
//! scaling), so parameters on very different scales are stepped sensibly.
//! Damping is multiplied by 10 whenever a trial step fails to lower the
//! weighted residual and divided by 10 after every accepted step.

use nalgebra::{SMatrix, SVector};

/// A weighted observation of the curve at (possibly fractional) iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Point {
    pub k: f64,
    pub y: f64,
    pub w: f64,
}

pub(crate) trait Curve<const N: usize> {
    fn value(&self, p: &SVector<f64, N>, k: f64) -> f64;

    fn gradient(&self, p: &SVector<f64, N>, k: f64) -> SVector<f64, N>;

    /// Maps a trial point into the feasible set, or rejects it.
    fn project(&self, p: SVector<f64, N>) -> Option<SVector<f64, N>>;
}

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-15;
const LAMBDA_MAX: f64 = 1e15;

pub(crate) fn weighted_sse<C: Curve<N>, const N: usize>(
    curve: &C,
    p: &SVector<f64, N>,
    points: &[Point],
) -> f64 {
    points
        .iter()
        .map(|pt| {
            let r = curve.value(p, pt.k) - pt.y;
            pt.w * r * r
        })
        .sum()
}

/// Refines `init` and returns the best parameters found with their weighted
/// sum of squared residuals.
pub(crate) fn refine<C: Curve<N>, const N: usize>(
    curve: &C,
    init: SVector<f64, N>,
    points: &[Point],
    max_steps: usize,
    tolerance: f64,
) -> (SVector<f64, N>, f64) {
    let mut p = init;
    let mut cost = weighted_sse(curve, &p, points);
    let mut lambda = LAMBDA_INIT;
    let mut accepted = 0;

    while accepted < max_steps && cost > 0.0 && cost.is_finite() {
        let mut normal = SMatrix::<f64, N, N>::zeros();
        let mut grad = SVector::<f64, N>::zeros();
        for pt in points {
            let j = curve.gradient(&p, pt.k);
            let r = curve.value(&p, pt.k) - pt.y;
            normal.syger(pt.w, &j, &j, 1.0);
            grad.axpy(pt.w * r, &j, 1.0);
        }
        let diag_floor = normal.diagonal().max() * 1e-12;
        if !(diag_floor > 0.0) {
            break;
        }

        let mut improved = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = normal;
            for i in 0..N {
                damped[(i, i)] += lambda * normal[(i, i)].max(diag_floor);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial = match curve.project(p + step) {
                Some(t) => t,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial_cost = weighted_sse(curve, &trial, points);
            if trial_cost < cost {
                let change = (trial - p).abs().max();
                let scale = p.abs().max();
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(LAMBDA_MIN);
                improved = true;
                accepted += 1;
                if change <= tolerance * (scale + tolerance) {
                    return (p, cost);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p, cost)
}
