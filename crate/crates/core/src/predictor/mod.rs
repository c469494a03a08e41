//! Online convergence prediction.
//!
//! A job's loss history is fitted to one of two curve families:
//!
//! * sublinear, `g(k) = 1 / (a·k² + b·k + c) + d`, covering the O(1/k) and
//!   O(1/k²) rates of first-order methods;
//! * exponential, `h(k) = μ^(k − b) + c` with `0 < μ < 1`, covering linear and
//!   superlinear methods such as L-BFGS.
//!
//! Recent iterations weigh more: the point at iteration `kᵢ` has weight
//! `decay^(k_latest − kᵢ)`. Fits start from closed-form initial guesses and
//! are refined with damped Gauss–Newton, then projected onto the set of
//! non-increasing curves.

mod backtest;
mod exponential;
mod refine;
mod sublinear;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use backtest::backtest_error;
pub use exponential::{fit_exponential, ExponentialFit};
pub use sublinear::{fit_sublinear, SublinearFit};

use crate::error::{Error, FitError, Result};
use crate::loss::LossHistory;
use refine::Point;

/// Points weighted below this are dropped before fitting.
const NEGLIGIBLE_WEIGHT: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Sublinear,
    Exponential,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Sublinear => "sublinear",
            Family::Exponential => "exponential",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sublinear" => Ok(Family::Sublinear),
            "exponential" => Ok(Family::Exponential),
            other => Err(format!("unknown family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Per-iteration weight base, in (0, 1].
    pub decay: f64,
    pub min_history: usize,
    pub max_refine_steps: usize,
    /// Relative parameter change below which refinement stops.
    pub refine_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            decay: 0.9,
            min_history: 5,
            max_refine_steps: 50,
            refine_tolerance: 1e-9,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.min_history < 4 {
            return Err(Error::InvalidConfig(format!(
                "min_history must be at least 4, got {}",
                self.min_history
            )));
        }
        if !(self.refine_tolerance >= 0.0) {
            return Err(Error::InvalidConfig(
                "refine_tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CurveParams {
    Sublinear(SublinearFit),
    Exponential(ExponentialFit),
}

impl CurveParams {
    pub fn family(&self) -> Family {
        match self {
            CurveParams::Sublinear(_) => Family::Sublinear,
            CurveParams::Exponential(_) => Family::Exponential,
        }
    }

    pub fn asymptote(&self) -> f64 {
        match self {
            CurveParams::Sublinear(s) => s.d,
            CurveParams::Exponential(e) => e.c,
        }
    }

    /// Unclamped curve value.
    pub fn eval(&self, k: f64) -> f64 {
        match self {
            CurveParams::Sublinear(s) => s.eval(k),
            CurveParams::Exponential(e) => e.eval(k),
        }
    }

    /// Curve value at `k`, never below the asymptote.
    pub fn predict_loss_at(&self, k: f64) -> f64 {
        let v = self.eval(k);
        let floor = self.asymptote();
        if v.is_nan() || v < floor {
            floor
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub params: CurveParams,
    pub weighted_rms_residual: f64,
    pub n_points: usize,
}

impl FittedModel {
    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn asymptote(&self) -> f64 {
        self.params.asymptote()
    }

    pub fn predict_loss_at(&self, k: f64) -> f64 {
        self.params.predict_loss_at(k)
    }
}

pub fn predict_loss_at(model: &FittedModel, k: f64) -> f64 {
    model.predict_loss_at(k)
}

/// Fits the hinted family when the job's optimizer is known, otherwise both
/// families, keeping the lower weighted residual (ties go to sublinear).
/// A failed hinted fit falls back to the other family.
pub fn select_model(
    history: &LossHistory,
    cfg: &FitConfig,
    hint: Option<Family>,
) -> Result<FittedModel, FitError> {
    check_history(history, cfg)?;
    let fit = |family| match family {
        Family::Sublinear => fit_sublinear(history, cfg).map(|f| f.into_model(history, cfg)),
        Family::Exponential => {
            fit_exponential(history, cfg).map(|f| f.into_model(history, cfg))
        }
    };
    if let Some(family) = hint {
        let other = match family {
            Family::Sublinear => Family::Exponential,
            Family::Exponential => Family::Sublinear,
        };
        return fit(family).or_else(|_| fit(other)).map_err(|_| FitError::NoModel);
    }
    match (fit(Family::Sublinear), fit(Family::Exponential)) {
        (Ok(s), Ok(e)) => {
            if e.weighted_rms_residual < s.weighted_rms_residual - 1e-12 {
                Ok(e)
            } else {
                Ok(s)
            }
        }
        (Ok(s), Err(_)) => Ok(s),
        (Err(_), Ok(e)) => Ok(e),
        (Err(_), Err(_)) => Err(FitError::NoModel),
    }
}

pub(crate) fn check_history(history: &LossHistory, cfg: &FitConfig) -> Result<(), FitError> {
    if history.len() < cfg.min_history {
        return Err(FitError::InsufficientHistory {
            have: history.len(),
            need: cfg.min_history,
        });
    }
    let range = history.observed_range();
    if !(range > 0.0) || !range.is_finite() {
        return Err(FitError::DegenerateHistory);
    }
    Ok(())
}

/// Exponentially weighted observations, newest weight 1.
pub(crate) fn weighted_points(history: &LossHistory, decay: f64) -> Vec<Point> {
    let latest = history.last().map(|r| r.iteration).unwrap_or(0);
    let mut points: Vec<Point> = history
        .records()
        .iter()
        .rev()
        .map(|r| Point {
            k: r.iteration as f64,
            y: r.loss,
            w: decay.powf((latest - r.iteration) as f64),
        })
        .take_while(|p| p.w >= NEGLIGIBLE_WEIGHT)
        .collect();
    points.reverse();
    points
}

pub(crate) fn weighted_rms(sse: f64, points: &[Point]) -> f64 {
    let total: f64 = points.iter().map(|p| p.w).sum();
    (sse / total).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history_from(f: impl Fn(f64) -> f64, n: usize) -> LossHistory {
        let losses: Vec<f64> = (0..n).map(|k| f(k as f64)).collect();
        LossHistory::from_losses(&losses)
    }

    #[test]
    fn selects_sublinear_for_harmonic_data() {
        let h = history_from(|k| 1.0 / (k + 1.0), 12);
        let m = select_model(&h, &FitConfig::default(), None).unwrap();
        assert_eq!(m.family(), Family::Sublinear);
    }

    #[test]
    fn selects_exponential_for_geometric_data() {
        let h = history_from(|k| 0.6f64.powf(k), 12);
        let m = select_model(&h, &FitConfig::default(), None).unwrap();
        assert_eq!(m.family(), Family::Exponential);
    }

    #[test]
    fn hint_overrides_selection() {
        let h = history_from(|k| 1.0 / (k + 1.0), 12);
        let m = select_model(&h, &FitConfig::default(), Some(Family::Exponential)).unwrap();
        assert_eq!(m.family(), Family::Exponential);
    }

    #[test]
    fn predict_examples() {
        let s = CurveParams::Sublinear(SublinearFit {
            a: 0.0,
            b: 1.0,
            c: 1.0,
            d: 0.0,
        });
        assert!((s.predict_loss_at(9.0) - 0.1).abs() < 1e-15);
        let e = CurveParams::Exponential(ExponentialFit {
            mu: 0.5,
            b: 0.0,
            c: 0.0,
        });
        assert_eq!(e.predict_loss_at(3.0), 0.125);
        let e = CurveParams::Exponential(ExponentialFit {
            mu: 0.5,
            b: 0.0,
            c: 0.2,
        });
        for k in [10.0, 100.0, 1e4, 1e9] {
            let v = e.predict_loss_at(k);
            assert!(v >= 0.2);
            assert!(v - 0.2 < 1e-3);
        }
    }

    #[test]
    fn rejects_short_and_flat_histories() {
        let cfg = FitConfig::default();
        let h = history_from(|k| 1.0 / (k + 1.0), 3);
        assert!(matches!(
            select_model(&h, &cfg, None),
            Err(FitError::InsufficientHistory { have: 3, need: 5 })
        ));
        let h = history_from(|_| 2.0, 8);
        assert_eq!(select_model(&h, &cfg, None), Err(FitError::DegenerateHistory));
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            decay: 0.0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FitConfig {
            min_history: 3,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn weights_decay_from_the_latest_point() {
        let h = history_from(|k| 1.0 / (k + 1.0), 4);
        let pts = weighted_points(&h, 0.5);
        let w: Vec<f64> = pts.iter().map(|p| p.w).collect();
        assert_eq!(w, vec![0.125, 0.25, 0.5, 1.0]);
    }
}
