use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use super::{reduction, AllocationPlan, Candidate};
use crate::loss::{ClusterSpec, JobId};

/// Waiting longer than this many epochs under oversubscription forces a core.
pub const STARVATION_EPOCHS: u32 = 10;

/// Predicted normalized gain of granting `job_id` its `cores_if_granted`-th
/// core. Orders by gain, then by smaller job id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainEstimate {
    pub job_id: JobId,
    pub cores_if_granted: u32,
    pub normalized_gain: f64,
}

impl Eq for GainEstimate {}

impl Ord for GainEstimate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.normalized_gain
            .total_cmp(&other.normalized_gain)
            .then_with(|| other.job_id.cmp(&self.job_id))
    }
}

impl PartialOrd for GainEstimate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Normalized epoch reduction of one job as a function of its core count.
/// Jobs without a usable model borrow a proxy curve.
#[derive(Clone, Copy)]
enum GainCurve<'a> {
    Fitted {
        cand: &'a Candidate<'a>,
        scale: f64,
    },
    /// Marginal gain 1/(a + 1): only used when no job has a model.
    Harmonic,
}

impl GainCurve<'_> {
    fn reduction(&self, cores: u32, epoch_length: f64) -> f64 {
        match *self {
            GainCurve::Fitted { cand, scale } => reduction(
                cand.model.expect("fitted curve"),
                cand.job.progress,
                scale,
                &cand.cost,
                cores,
                epoch_length,
            ),
            GainCurve::Harmonic => (1..=cores).map(|i| 1.0 / f64::from(i)).sum(),
        }
    }

    fn marginal(&self, cores: u32, epoch_length: f64) -> f64 {
        if let GainCurve::Harmonic = self {
            return 1.0 / f64::from(cores + 1);
        }
        let g = self.reduction(cores + 1, epoch_length) - self.reduction(cores, epoch_length);
        if g.is_nan() {
            0.0
        } else {
            g.max(0.0)
        }
    }
}

fn own_curve<'a>(cand: &'a Candidate<'a>) -> Option<GainCurve<'a>> {
    let scale = cand.job.history.max_delta();
    (cand.model.is_some() && scale > 0.0).then_some(GainCurve::Fitted { cand, scale })
}

/// Greedy quality-maximizing allocation.
///
/// With at most `capacity` jobs, every job starts at one core and the
/// remaining cores go one at a time to the job with the largest marginal
/// gain. Only the winner's key changes after a grant, so the loop costs
/// O((C − J) log J). With more jobs than cores, the `capacity` jobs with the
/// largest single-core gain get one core each; jobs that waited more than
/// [`STARVATION_EPOCHS`] epochs go first.
///
/// A job without a model uses the gain curve of the fitted job whose first
/// marginal gain is largest, so newly arrived jobs are admitted
/// optimistically.
pub fn allocate_slaq(
    jobs: &[Candidate<'_>],
    spec: &ClusterSpec,
    epoch_index: u64,
) -> AllocationPlan {
    let mut plan = AllocationPlan::empty(epoch_index, spec.capacity);
    if jobs.is_empty() {
        return plan;
    }
    let t = spec.epoch_length;
    let own: Vec<Option<GainCurve<'_>>> = jobs.iter().map(own_curve).collect();

    if jobs.len() > spec.capacity as usize {
        let best_single = own
            .iter()
            .flatten()
            .map(|c| c.reduction(1, t))
            .fold(None, |m: Option<f64>, g| Some(m.map_or(g, |m| m.max(g))))
            .unwrap_or(1.0);
        let mut ranked: Vec<GainEstimate> = jobs
            .iter()
            .zip(&own)
            .map(|(cand, curve)| {
                let gain = if cand.waiting_epochs > STARVATION_EPOCHS {
                    f64::INFINITY
                } else {
                    curve.map_or(best_single, |c| c.reduction(1, t))
                };
                GainEstimate {
                    job_id: cand.id(),
                    cores_if_granted: 1,
                    normalized_gain: gain,
                }
            })
            .collect();
        ranked.sort_unstable_by(|a, b| b.cmp(a));
        plan.assignments = ranked
            .iter()
            .enumerate()
            .map(|(i, g)| (g.job_id, u32::from(i < spec.capacity as usize)))
            .collect();
        return plan;
    }

    let proxy = own
        .iter()
        .flatten()
        .map(|c| (c.marginal(1, t), *c))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map_or(GainCurve::Harmonic, |(_, c)| c);
    let curves: Vec<GainCurve<'_>> = own.iter().map(|c| c.unwrap_or(proxy)).collect();

    let mut cores = vec![1u32; jobs.len()];
    let mut index = BTreeMap::new();
    let mut heap = BinaryHeap::with_capacity(jobs.len());
    for (i, cand) in jobs.iter().enumerate() {
        index.insert(cand.id(), i);
        if cand.cost.max_parallelism > 1 {
            heap.push(GainEstimate {
                job_id: cand.id(),
                cores_if_granted: 2,
                normalized_gain: curves[i].marginal(1, t),
            });
        }
    }

    let mut spare = spec.capacity as usize - jobs.len();
    while spare > 0 {
        let Some(top) = heap.pop() else { break };
        let i = index[&top.job_id];
        cores[i] += 1;
        spare -= 1;
        if cores[i] < jobs[i].cost.max_parallelism {
            heap.push(GainEstimate {
                job_id: top.job_id,
                cores_if_granted: cores[i] + 1,
                normalized_gain: curves[i].marginal(cores[i], t),
            });
        }
    }

    plan.assignments = jobs.iter().map(|c| c.id()).zip(cores).collect();
    plan
}
