//! Per-epoch core allocation.
//!
//! [`allocate_slaq`] hands out cores one at a time to the job whose predicted
//! normalized loss reduction grows the most, after giving every job one core.
//! [`allocate_fair`] is the work-conserving equal-share baseline.

mod fair;
mod greedy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fair::allocate_fair;
pub use greedy::{allocate_slaq, GainEstimate, STARVATION_EPOCHS};

use crate::loss::{ClusterSpec, JobId, JobState};
use crate::predictor::FittedModel;

/// How cores translate into training progress for one job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Core-seconds needed for one iteration.
    pub work_per_iteration: f64,
    /// Cores beyond this add no speed.
    pub max_parallelism: u32,
}

impl CostModel {
    pub fn new(work_per_iteration: f64, max_parallelism: u32) -> Self {
        debug_assert!(work_per_iteration > 0.0);
        debug_assert!(max_parallelism > 0);
        Self {
            work_per_iteration,
            max_parallelism,
        }
    }
}

/// Iterations completed in one epoch; linear in cores up to the job's cap.
pub fn iterations_in_epoch(cost: &CostModel, cores: u32, epoch_length: f64) -> f64 {
    f64::from(cores.min(cost.max_parallelism)) * epoch_length / cost.work_per_iteration
}

/// Predicted loss drop over the next epoch with `cores` cores, divided by the
/// job's largest observed per-iteration drop. Returns `None` when the job has
/// no normalization scale yet.
pub fn predict_epoch_reduction(
    job: &JobState,
    model: &FittedModel,
    cost: &CostModel,
    cores: u32,
    epoch_length: f64,
) -> Option<f64> {
    let scale = job.history.max_delta();
    if !(scale > 0.0) {
        return None;
    }
    Some(reduction(model, job.progress, scale, cost, cores, epoch_length))
}

fn reduction(
    model: &FittedModel,
    progress: f64,
    scale: f64,
    cost: &CostModel,
    cores: u32,
    epoch_length: f64,
) -> f64 {
    let steps = iterations_in_epoch(cost, cores, epoch_length);
    if steps == 0.0 {
        return 0.0;
    }
    let now = model.predict_loss_at(progress);
    let later = model.predict_loss_at(progress + steps);
    ((now - later) / scale).max(0.0)
}

/// A job as the allocator sees it.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub job: &'a JobState,
    /// `None` while the history is too short to fit or every fit failed.
    pub model: Option<&'a FittedModel>,
    pub cost: CostModel,
    /// Consecutive epochs the job has been admitted but held no cores.
    pub waiting_epochs: u32,
}

impl Candidate<'_> {
    pub fn id(&self) -> JobId {
        self.job.id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub epoch_index: u64,
    /// Cores per job; jobs paused this epoch appear with 0.
    pub assignments: BTreeMap<JobId, u32>,
    pub capacity: u32,
}

impl AllocationPlan {
    pub fn empty(epoch_index: u64, capacity: u32) -> Self {
        Self {
            epoch_index,
            assignments: BTreeMap::new(),
            capacity,
        }
    }

    pub fn total(&self) -> u64 {
        self.assignments.values().map(|&c| u64::from(c)).sum()
    }

    pub fn cores(&self, id: JobId) -> u32 {
        self.assignments.get(&id).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Slaq,
    Fair,
}

impl Policy {
    pub fn allocate(
        self,
        jobs: &[Candidate<'_>],
        spec: &ClusterSpec,
        epoch_index: u64,
    ) -> AllocationPlan {
        match self {
            Policy::Slaq => allocate_slaq(jobs, spec, epoch_index),
            Policy::Fair => allocate_fair(jobs, spec, epoch_index),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Slaq => "slaq",
            Policy::Fair => "fair",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slaq" => Ok(Policy::Slaq),
            "fair" => Ok(Policy::Fair),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}
