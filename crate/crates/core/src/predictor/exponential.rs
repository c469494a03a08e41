use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::refine::{refine, Curve, Point};
use super::{check_history, weighted_points, weighted_rms, CurveParams, FitConfig, FittedModel};
use crate::error::FitError;
use crate::loss::LossHistory;

const MU_MIN: f64 = 1e-9;
const MU_MAX: f64 = 1.0 - 1e-12;

/// `h(k) = μ^(k − b) + c`; `c` is the asymptote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub mu: f64,
    pub b: f64,
    pub c: f64,
}

impl ExponentialFit {
    pub fn eval(&self, k: f64) -> f64 {
        self.mu.powf(k - self.b) + self.c
    }

    pub(crate) fn into_model(self, history: &LossHistory, cfg: &FitConfig) -> FittedModel {
        let points = weighted_points(history, cfg.decay);
        let sse: f64 = points
            .iter()
            .map(|p| p.w * (self.eval(p.k) - p.y).powi(2))
            .sum();
        FittedModel {
            params: CurveParams::Exponential(self),
            weighted_rms_residual: weighted_rms(sse, &points),
            n_points: history.len(),
        }
    }
}

/// Refinement runs on `amp · μ^(k − origin) + c` with `amp = μ^(origin − b)`,
/// which decouples the shift from the rate. Parameter order is [μ, amp, c].
struct Scaled {
    origin: f64,
}

impl Scaled {
    fn to_fit(&self, p: &Vector3<f64>) -> ExponentialFit {
        let (mu, amp) = (p[0], p[1]);
        ExponentialFit {
            mu,
            b: self.origin - amp.ln() / mu.ln(),
            c: p[2],
        }
    }
}

impl Curve<3> for Scaled {
    fn value(&self, p: &Vector3<f64>, k: f64) -> f64 {
        p[1] * p[0].powf(k - self.origin) + p[2]
    }

    fn gradient(&self, p: &Vector3<f64>, k: f64) -> Vector3<f64> {
        let u = k - self.origin;
        let pow = p[0].powf(u);
        Vector3::new(p[1] * u * pow / p[0], pow, 1.0)
    }

    fn project(&self, mut p: Vector3<f64>) -> Option<Vector3<f64>> {
        p[0] = p[0].clamp(MU_MIN, MU_MAX);
        if p[1] > 0.0 && p.iter().all(|v| v.is_finite()) {
            Some(p)
        } else {
            None
        }
    }
}

/// Fits `h(k) = μ^(k − b) + c` by weighted least squares.
///
/// Starting point: the asymptote sits 10% of the observed range below the
/// minimum loss; μ is the median ratio of consecutive loss drops (0.5 when no
/// ratio is defined), clamped to [0.01, 0.99]; the shift comes from a weighted
/// log-linear regression of `ln(loss − c)` on `k` with slope `ln μ`.
pub fn fit_exponential(
    history: &LossHistory,
    cfg: &FitConfig,
) -> Result<ExponentialFit, FitError> {
    check_history(history, cfg)?;
    let points = weighted_points(history, cfg.decay);
    let curve = Scaled {
        origin: points[0].k,
    };
    let init = initial_guess(&curve, &points, history);
    let init = curve
        .project(init)
        .ok_or(FitError::Infeasible("initial amplitude is not positive"))?;
    let (p, sse) = refine(
        &curve,
        init,
        &points,
        cfg.max_refine_steps,
        cfg.refine_tolerance,
    );
    let fit = curve.to_fit(&p);
    if !sse.is_finite() || curve.project(p).is_none() || !fit.b.is_finite() {
        return Err(FitError::Infeasible("curve is not decreasing"));
    }
    Ok(fit)
}

fn initial_guess(curve: &Scaled, points: &[Point], history: &LossHistory) -> Vector3<f64> {
    let min = history.min_loss().expect("history is non-empty");
    let c0 = min - 0.1 * history.observed_range();
    let mu0 = median_drop_ratio(history)
        .unwrap_or(0.5)
        .clamp(0.01, 0.99);

    let ln_mu = mu0.ln();
    let (num, den) = points.iter().fold((0.0, 0.0), |(num, den), pt| {
        let resid = (pt.y - c0).ln() - (pt.k - curve.origin) * ln_mu;
        (num + pt.w * resid, den + pt.w)
    });
    let amp0 = (num / den).exp();
    Vector3::new(mu0, amp0, c0)
}

/// Median of `(l[i+1] − l[i+2]) / (l[i] − l[i+1])` over consecutive triples.
fn median_drop_ratio(history: &LossHistory) -> Option<f64> {
    let mut ratios: Vec<f64> = history
        .records()
        .windows(3)
        .filter_map(|w| {
            let r = (w[1].loss - w[2].loss) / (w[0].loss - w[1].loss);
            r.is_finite().then_some(r)
        })
        .collect();
    if ratios.is_empty() {
        return None;
    }
    ratios.sort_by(f64::total_cmp);
    let mid = ratios.len() / 2;
    Some(if ratios.len().is_multiple_of(2) {
        0.5 * (ratios[mid - 1] + ratios[mid])
    } else {
        ratios[mid]
    })
}
