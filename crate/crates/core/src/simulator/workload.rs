use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::JobId;
use crate::predictor::{CurveParams, ExponentialFit, Family, SublinearFit};
use crate::scheduler::CostModel;

/// Closed interval `[lo, hi]`; written as a two-element array in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    fn check(&self, name: &str, positive: bool) -> Result<()> {
        let Range(lo, hi) = *self;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || (positive && lo <= 0.0) {
            return Err(Error::InvalidConfig(format!("{name}: bad range [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn uniform(&self, rng: &mut impl Rng) -> f64 {
        self.0 + (self.1 - self.0) * rng.random::<f64>()
    }

    fn log_uniform(&self, rng: &mut impl Rng) -> f64 {
        let (lo, hi) = (self.0.ln(), self.1.ln());
        (lo + (hi - lo) * rng.random::<f64>()).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyMix {
    pub sublinear: f64,
    pub exponential: f64,
}

/// Synthetic job population. Curve shapes are drawn in normalized form and
/// then stretched onto a random raw loss scale, so jobs are comparable only
/// after normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub n_jobs: usize,
    /// Mean of the exponential inter-arrival gaps, seconds.
    pub mean_interarrival: f64,
    pub family_mix: FamilyMix,
    pub seed: u64,
    /// Loss at iteration 0 (log-uniform).
    pub initial_loss: Range,
    /// Asymptote as a fraction of the initial loss.
    pub asymptote_fraction: Range,
    /// β in the normalized sublinear curve 1/(1 + β·k + α·k²) (log-uniform).
    pub sublinear_rate: Range,
    /// α in the normalized sublinear curve.
    pub sublinear_curvature: Range,
    /// μ for exponential jobs.
    pub exponential_rate: Range,
    /// Core-seconds per iteration (log-uniform).
    pub work_per_iteration: Range,
    /// Inclusive bounds on per-job core caps.
    pub max_parallelism: (u32, u32),
    /// Reported-loss noise std as a fraction of the loss range.
    pub noise_sigma: Range,
    /// Converged once 3 consecutive drops fall below this fraction of the
    /// loss range.
    pub convergence_epsilon: f64,
    pub max_iterations: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            n_jobs: 160,
            mean_interarrival: 15.0,
            family_mix: FamilyMix {
                sublinear: 0.5,
                exponential: 0.5,
            },
            seed: 1,
            initial_loss: Range(0.5, 50.0),
            asymptote_fraction: Range(0.05, 0.6),
            sublinear_rate: Range(0.1, 1.0),
            sublinear_curvature: Range(0.0, 0.02),
            exponential_rate: Range(0.85, 0.97),
            work_per_iteration: Range(110.0, 330.0),
            max_parallelism: (128, 640),
            noise_sigma: Range(0.0, 0.002),
            convergence_epsilon: 1e-3,
            max_iterations: 2_000,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let mix = &self.family_mix;
        if mix.sublinear < 0.0
            || mix.exponential < 0.0
            || (mix.sublinear + mix.exponential - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(
                "family_mix fractions must be non-negative and sum to 1".into(),
            ));
        }
        if !(self.mean_interarrival > 0.0) {
            return Err(Error::InvalidConfig(
                "mean_interarrival must be positive".into(),
            ));
        }
        self.initial_loss.check("initial_loss", true)?;
        self.asymptote_fraction.check("asymptote_fraction", false)?;
        if self.asymptote_fraction.0 < 0.0 || self.asymptote_fraction.1 >= 1.0 {
            return Err(Error::InvalidConfig(
                "asymptote_fraction must lie in [0, 1)".into(),
            ));
        }
        self.sublinear_rate.check("sublinear_rate", true)?;
        self.sublinear_curvature.check("sublinear_curvature", false)?;
        if self.sublinear_curvature.0 < 0.0 {
            return Err(Error::InvalidConfig(
                "sublinear_curvature must be non-negative".into(),
            ));
        }
        self.exponential_rate.check("exponential_rate", true)?;
        if self.exponential_rate.1 >= 1.0 {
            return Err(Error::InvalidConfig(
                "exponential_rate must lie in (0, 1)".into(),
            ));
        }
        self.work_per_iteration.check("work_per_iteration", true)?;
        let (lo, hi) = self.max_parallelism;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "max_parallelism: bad range [{lo}, {hi}]"
            )));
        }
        self.noise_sigma.check("noise_sigma", false)?;
        if self.noise_sigma.0 < 0.0 || self.noise_sigma.1 >= 0.05 {
            return Err(Error::InvalidConfig(
                "noise_sigma must lie in [0, 0.05)".into(),
            ));
        }
        if !(self.convergence_epsilon > 0.0) {
            return Err(Error::InvalidConfig(
                "convergence_epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ground truth for one synthetic job. Never shown to the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobProfile {
    pub family: Family,
    pub true_params: CurveParams,
    pub initial_loss: f64,
    pub cost: CostModel,
    pub noise_sigma: f64,
    pub convergence_epsilon: f64,
    pub max_iterations: u64,
}

impl JobProfile {
    pub fn true_loss(&self, k: f64) -> f64 {
        if k == 0.0 {
            return self.initial_loss;
        }
        self.true_params.eval(k)
    }

    pub fn asymptote(&self) -> f64 {
        self.true_params.asymptote()
    }

    /// Initial loss minus asymptote.
    pub fn loss_range(&self) -> f64 {
        self.initial_loss - self.asymptote()
    }
}

pub fn true_loss(profile: &JobProfile, k: f64) -> f64 {
    profile.true_loss(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadJob {
    pub id: JobId,
    pub arrival: f64,
    pub profile: JobProfile,
}

/// Draws the job list: the first job arrives at t = 0 and gaps are
/// exponential with the configured mean. Deterministic in `spec.seed`.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<WorkloadJob>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gaps = Exp::new(1.0 / spec.mean_interarrival)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut arrival = 0.0;
    let mut jobs = Vec::with_capacity(spec.n_jobs);
    for i in 0..spec.n_jobs {
        if i > 0 {
            arrival += gaps.sample(&mut rng);
        }
        jobs.push(WorkloadJob {
            id: JobId(i as u64),
            arrival,
            profile: draw_profile(spec, &mut rng),
        });
    }
    Ok(jobs)
}

fn draw_profile(spec: &WorkloadSpec, rng: &mut impl Rng) -> JobProfile {
    let family = if rng.random::<f64>() < spec.family_mix.sublinear {
        Family::Sublinear
    } else {
        Family::Exponential
    };
    let initial_loss = spec.initial_loss.log_uniform(rng);
    let asymptote = initial_loss * spec.asymptote_fraction.uniform(rng);
    let span = initial_loss - asymptote;
    let true_params = match family {
        Family::Sublinear => {
            let beta = spec.sublinear_rate.log_uniform(rng);
            let alpha = spec.sublinear_curvature.uniform(rng);
            CurveParams::Sublinear(SublinearFit {
                a: alpha / span,
                b: beta / span,
                c: 1.0 / span,
                d: asymptote,
            })
        }
        Family::Exponential => {
            let mu = spec.exponential_rate.uniform(rng);
            CurveParams::Exponential(ExponentialFit {
                mu,
                b: -span.ln() / mu.ln(),
                c: asymptote,
            })
        }
    };
    let (lo, hi) = spec.max_parallelism;
    let max_parallelism = rng.random_range(lo..=hi);
    JobProfile {
        family,
        true_params,
        initial_loss,
        cost: CostModel::new(spec.work_per_iteration.log_uniform(rng), max_parallelism),
        noise_sigma: spec.noise_sigma.uniform(rng),
        convergence_epsilon: spec.convergence_epsilon,
        max_iterations: spec.max_iterations,
    }
}

/// Short stable digest of a job list; equal digests mean equal workloads.
pub fn workload_fingerprint(jobs: &[WorkloadJob]) -> String {
    let mut hasher = Sha256::new();
    for job in jobs {
        hasher.update(format!("{job:?}\n").as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = WorkloadSpec::default();
        let a = generate_workload(&spec).unwrap();
        let b = generate_workload(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(workload_fingerprint(&a), workload_fingerprint(&b));
        let other = generate_workload(&WorkloadSpec {
            seed: 2,
            ..spec
        })
        .unwrap();
        assert_ne!(workload_fingerprint(&a), workload_fingerprint(&other));
    }

    #[test]
    fn poisson_gaps_have_the_configured_mean() {
        let jobs = generate_workload(&WorkloadSpec::default()).unwrap();
        assert_eq!(jobs.len(), 160);
        assert_eq!(jobs[0].arrival, 0.0);
        let mean_gap = jobs.last().unwrap().arrival / 159.0;
        assert!((mean_gap - 15.0).abs() < 0.2 * 15.0, "mean gap {mean_gap}");
        assert!(jobs.windows(2).all(|w| w[0].arrival <= w[1].arrival));
    }

    #[test]
    fn family_mix_is_respected() {
        let spec = WorkloadSpec {
            family_mix: FamilyMix {
                sublinear: 1.0,
                exponential: 0.0,
            },
            ..WorkloadSpec::default()
        };
        let jobs = generate_workload(&spec).unwrap();
        assert!(jobs.iter().all(|j| j.profile.family == Family::Sublinear));
    }

    #[test]
    fn true_loss_examples() {
        let mut profile = generate_workload(&WorkloadSpec::default()).unwrap()[0].profile;
        profile.true_params = CurveParams::Sublinear(SublinearFit {
            a: 0.0,
            b: 1.0,
            c: 1.0,
            d: 0.0,
        });
        profile.initial_loss = 1.0;
        assert_eq!(profile.true_loss(3.0), 0.25);
        profile.true_params = CurveParams::Exponential(ExponentialFit {
            mu: 0.5,
            b: 0.0,
            c: 0.0,
        });
        assert_eq!(profile.true_loss(2.0), 0.25);
    }

    #[test]
    fn profiles_start_at_initial_loss() {
        for job in generate_workload(&WorkloadSpec::default()).unwrap() {
            let p = job.profile;
            let at_zero = p.true_params.eval(0.0);
            assert!((at_zero - p.initial_loss).abs() <= 1e-9 * p.initial_loss);
            assert_eq!(p.true_loss(0.0), p.initial_loss);
            assert!(p.loss_range() > 0.0);
            assert!(p.true_loss(50.0) < p.initial_loss);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = WorkloadSpec {
            family_mix: FamilyMix {
                sublinear: 0.7,
                exponential: 0.7,
            },
            ..WorkloadSpec::default()
        };
        assert!(generate_workload(&bad).is_err());
        let bad = WorkloadSpec {
            mean_interarrival: 0.0,
            ..WorkloadSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = WorkloadSpec {
            noise_sigma: Range(0.0, 0.06),
            ..WorkloadSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
