//! Epoch-synchronous cluster simulator over synthetic workloads or recorded
//! loss traces.

mod engine;
mod trace;
mod workload;

use serde::{Deserialize, Serialize};

pub use engine::{
    replay_trace, replay_trace_with, run_simulation, run_simulation_with_trace, ReplayOptions,
    Simulation,
};
pub use trace::{Trace, TraceJob, TRACE_HEADER};
pub use workload::{
    generate_workload, true_loss, workload_fingerprint, FamilyMix, JobProfile, Range,
    WorkloadJob, WorkloadSpec,
};

use crate::error::{Error, Result};
use crate::loss::ClusterSpec;
use crate::predictor::FitConfig;
use crate::scheduler::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub cluster: ClusterSpec,
    pub policy: Policy,
    pub workload: WorkloadSpec,
    /// Simulated seconds; the run also stops once every job has finished.
    pub duration: f64,
    /// Seconds between time-series samples; `None` samples every epoch.
    pub metrics_interval: Option<f64>,
    pub fit: FitConfig,
    /// Tell the predictor each synthetic job's convergence family.
    pub family_hint: bool,
    /// Record wall-clock allocation latency. Off gives byte-identical
    /// bundles across runs.
    pub measure_latency: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cluster: ClusterSpec::default(),
            policy: Policy::Slaq,
            workload: WorkloadSpec::default(),
            duration: 4_000.0,
            metrics_interval: None,
            fit: FitConfig::default(),
            family_hint: true,
            measure_latency: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.workload.validate()?;
        self.fit.validate()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if let Some(interval) = self.metrics_interval {
            if !(interval > 0.0 && interval.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "metrics_interval must be positive, got {interval}"
                )));
            }
        }
        Ok(())
    }

    pub fn metrics_interval(&self) -> f64 {
        self.metrics_interval.unwrap_or(self.cluster.epoch_length)
    }
}
