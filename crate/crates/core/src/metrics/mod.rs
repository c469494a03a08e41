//! Evaluation quantities: average normalized loss over time, per-job
//! time-to-quality, core shares by loss group, and scheduling latency.

mod export;

use serde::{Deserialize, Serialize};

pub use export::{export_csv, format_sig6, read_csv, JOBS_HEADER, LATENCY_HEADER, TIMESERIES_HEADER};

use crate::loss::JobId;
use crate::predictor::Family;
use crate::scheduler::AllocationPlan;

/// Fractions of allocated cores held by the high-, medium- and low-loss
/// groups of running jobs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSample {
    pub sim_time: f64,
    pub avg_normalized_loss: f64,
    pub running_jobs: usize,
    pub shares: GroupShare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub job_id: JobId,
    pub arrival_s: f64,
    pub family: Option<Family>,
    /// Seconds from arrival until normalized loss ≤ 0.10.
    pub time_to_90pct_s: Option<f64>,
    /// Seconds from arrival until normalized loss ≤ 0.05.
    pub time_to_95pct_s: Option<f64>,
    /// Seconds from arrival until the job finished.
    pub completion_s: Option<f64>,
    pub total_core_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub epoch: u64,
    pub millis: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub time_series: Vec<TimeSample>,
    pub job_summaries: Vec<JobSummary>,
    pub scheduler_latencies: Vec<LatencySample>,
}

impl MetricsBundle {
    fn window(&self, from: f64, to: f64) -> impl Iterator<Item = &TimeSample> {
        self.time_series
            .iter()
            .filter(move |s| s.sim_time >= from && s.sim_time <= to)
    }

    /// Mean of `avg_normalized_loss` over samples in `[from, to]`.
    pub fn time_averaged_loss(&self, from: f64, to: f64) -> Option<f64> {
        mean(self.window(from, to).map(|s| s.avg_normalized_loss))
    }

    /// Mean group shares over samples in `[from, to]`, alongside the mean
    /// fraction of running jobs in each group.
    pub fn time_averaged_shares(&self, from: f64, to: f64) -> Option<(GroupShare, GroupShare)> {
        let mut n = 0usize;
        let mut shares = GroupShare::default();
        let mut sizes = GroupShare::default();
        for s in self.window(from, to) {
            let (h, m, l) = group_sizes(s.running_jobs);
            let total = s.running_jobs as f64;
            shares.high += s.shares.high;
            shares.medium += s.shares.medium;
            shares.low += s.shares.low;
            sizes.high += h as f64 / total;
            sizes.medium += m as f64 / total;
            sizes.low += l as f64 / total;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let scale = |g: GroupShare| GroupShare {
            high: g.high / n as f64,
            medium: g.medium / n as f64,
            low: g.low / n as f64,
        };
        Some((scale(shares), scale(sizes)))
    }

    pub fn latency_percentile(&self, q: f64) -> Option<f64> {
        let millis: Vec<f64> = self.scheduler_latencies.iter().map(|l| l.millis).collect();
        percentile(&millis, q)
    }

    pub fn summary(&self, id: JobId) -> Option<&JobSummary> {
        self.job_summaries.iter().find(|j| j.job_id == id)
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Nearest-rank percentile, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Mean normalized loss of the running jobs; `None` when nothing runs.
pub fn avg_normalized_loss(normalized_losses: &[f64]) -> Option<f64> {
    mean(normalized_losses.iter().copied())
}

/// First time at which the trajectory's normalized loss reaches
/// `1 − fraction`, interpolating linearly between samples. Trajectory points
/// are `(seconds since arrival, normalized loss)` in time order.
pub fn time_to_fraction(trajectory: &[(f64, f64)], fraction: f64) -> Option<f64> {
    let threshold = 1.0 - fraction;
    let idx = trajectory.iter().position(|&(_, l)| l <= threshold)?;
    let (t1, l1) = trajectory[idx];
    if idx == 0 {
        return Some(t1);
    }
    let (t0, l0) = trajectory[idx - 1];
    Some(t0 + (l0 - threshold) / (l0 - l1) * (t1 - t0))
}

/// Sizes of the high (top ⌈25%⌉), medium (next ⌈25%⌉) and low (rest) loss
/// groups for `n` running jobs.
pub fn group_sizes(n: usize) -> (usize, usize, usize) {
    let high = n.div_ceil(4);
    let medium = n.div_ceil(4).min(n - high);
    (high, medium, n - high - medium)
}

/// Ranks jobs by normalized loss (highest first, ties to smaller id) and
/// reports each group's fraction of the cores allocated by `plan`.
pub fn group_shares(jobs: &[(JobId, f64)], plan: &AllocationPlan) -> GroupShare {
    let mut ranked: Vec<(JobId, f64)> = jobs.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let (high, medium, _) = group_sizes(ranked.len());
    let mut cores = [0.0f64; 3];
    for (rank, (id, _)) in ranked.iter().enumerate() {
        let group = if rank < high {
            0
        } else if rank < high + medium {
            1
        } else {
            2
        };
        cores[group] += f64::from(plan.cores(*id));
    }
    let total: f64 = cores.iter().sum();
    if total == 0.0 {
        return GroupShare::default();
    }
    GroupShare {
        high: cores[0] / total,
        medium: cores[1] / total,
        low: cores[2] / total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn plan(cores: &[(u64, u32)]) -> AllocationPlan {
        AllocationPlan {
            epoch_index: 0,
            assignments: cores
                .iter()
                .map(|&(id, c)| (JobId(id), c))
                .collect::<BTreeMap<_, _>>(),
            capacity: 64,
        }
    }

    #[test]
    fn average_loss_examples() {
        assert_eq!(avg_normalized_loss(&[1.0, 0.2]), Some(0.6));
        assert_eq!(avg_normalized_loss(&[0.3]), Some(0.3));
        assert_eq!(avg_normalized_loss(&[]), None);
    }

    fn harmonic_trajectory() -> Vec<(f64, f64)> {
        // 1/(k+1) at one iteration per second.
        (0..40).map(|k| (k as f64, 1.0 / (k as f64 + 1.0))).collect()
    }

    #[test]
    fn time_to_fraction_examples() {
        let traj = harmonic_trajectory();
        assert!((time_to_fraction(&traj, 0.9).unwrap() - 9.0).abs() < 1e-9);
        assert_eq!(time_to_fraction(&traj, 0.5), Some(1.0));
        let stalled: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 0.2)).collect();
        assert_eq!(time_to_fraction(&stalled, 0.9), None);
    }

    #[test]
    fn time_to_fraction_interpolates() {
        let traj = [(0.0, 1.0), (10.0, 0.0)];
        assert!((time_to_fraction(&traj, 0.9).unwrap() - 9.0).abs() < 1e-12);
        assert!((time_to_fraction(&traj, 0.25).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn group_shares_examples() {
        let jobs = [(JobId(0), 0.9), (JobId(1), 0.5), (JobId(2), 0.1), (JobId(3), 0.05)];
        let s = group_shares(&jobs, &plan(&[(0, 4), (1, 4), (2, 4), (3, 4)]));
        assert_eq!(s, GroupShare { high: 0.25, medium: 0.25, low: 0.5 });

        let s = group_shares(&[(JobId(7), 0.4)], &plan(&[(7, 10)]));
        assert_eq!(s, GroupShare { high: 1.0, medium: 0.0, low: 0.0 });

        let s = group_shares(&jobs, &plan(&[(0, 10), (1, 4), (2, 1), (3, 1)]));
        assert!((s.high - 10.0 / 16.0).abs() < 1e-15);
        assert!((s.low - 2.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn group_shares_break_ties_by_id() {
        let jobs = [(JobId(5), 0.5), (JobId(2), 0.5), (JobId(9), 0.5), (JobId(1), 0.5)];
        let s = group_shares(&jobs, &plan(&[(1, 3), (2, 1), (5, 0), (9, 0)]));
        assert_eq!(s.high, 0.75);
        assert_eq!(s.medium, 0.25);
    }

    #[test]
    fn group_sizes_use_ceilings() {
        assert_eq!(group_sizes(1), (1, 0, 0));
        assert_eq!(group_sizes(2), (1, 1, 0));
        assert_eq!(group_sizes(4), (1, 1, 2));
        assert_eq!(group_sizes(5), (2, 2, 1));
        assert_eq!(group_sizes(8), (2, 2, 4));
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), Some(50.0));
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&[3.0], 99.0), Some(3.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn shares_sum_to_one(
                jobs in prop::collection::vec((0.0f64..1.0, 0u32..20), 1..30)
            ) {
                let ids: Vec<(JobId, f64)> =
                    jobs.iter().enumerate().map(|(i, &(l, _))| (JobId(i as u64), l)).collect();
                let p = plan(&jobs.iter().enumerate().map(|(i, &(_, c))| (i as u64, c)).collect::<Vec<_>>());
                let s = group_shares(&ids, &p);
                if p.total() > 0 {
                    prop_assert!((s.high + s.medium + s.low - 1.0).abs() < 1e-12);
                }
                prop_assert!(s.high >= 0.0 && s.medium >= 0.0 && s.low >= 0.0);
            }

            #[test]
            fn time_to_fraction_is_monotone(
                drops in prop::collection::vec(-0.02f64..0.2, 1..60),
                f1 in 0.01f64..0.99,
                f2 in 0.01f64..0.99,
            ) {
                let mut loss = 1.0f64;
                let mut traj = vec![(0.0, loss)];
                for (i, d) in drops.iter().enumerate() {
                    loss = (loss - d).clamp(0.0, 1.0);
                    traj.push(((i + 1) as f64, loss));
                }
                let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
                if let Some(t_hi) = time_to_fraction(&traj, hi) {
                    let t_lo = time_to_fraction(&traj, lo).unwrap();
                    prop_assert!(t_lo <= t_hi + 1e-9);
                }
            }

            #[test]
            fn average_stays_in_unit_interval(v in prop::collection::vec(0.0f64..=1.0, 1..50)) {
                let a = avg_normalized_loss(&v).unwrap();
                prop_assert!((0.0..=1.0 + 1e-15).contains(&a));
            }
        }
    }
}
