//! Per-job loss histories and the loss-delta normalization that makes
//! progress comparable across jobs whose raw losses live on unrelated scales.
//!
//! Each iteration's loss drop is divided by the largest single-iteration drop
//! seen so far for that job. The first drop is therefore always 1.0, later
//! drops shrink towards 0 as the job converges, and multiplying a job's raw
//! losses by any positive constant leaves every normalized value unchanged.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One loss report: the raw loss observed after `iteration` completed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    /// Seconds since simulation start.
    pub sim_time: f64,
    pub loss: f64,
}

impl LossRecord {
    pub fn new(iteration: u64, sim_time: f64, loss: f64) -> Self {
        Self {
            iteration,
            sim_time,
            loss,
        }
    }
}

/// Ordered loss reports for one job plus its normalization scale.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    records: Vec<LossRecord>,
    max_delta: f64,
}

impl LossHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = LossRecord>) -> Result<Self> {
        let mut history = Self::new();
        for record in records {
            history.append(record)?;
        }
        Ok(history)
    }

    /// Builds a history from raw losses at iterations `0..losses.len()`, one
    /// second apart.
    pub fn from_losses(losses: &[f64]) -> Self {
        let mut history = Self::new();
        for (k, &loss) in losses.iter().enumerate() {
            history
                .append(LossRecord::new(k as u64, k as f64, loss))
                .expect("consecutive iterations are monotone");
        }
        history
    }

    /// Appends a record, updating the largest observed drop. Loss increases
    /// are kept but never raise the scale.
    pub fn append(&mut self, record: LossRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::NonMonotoneIteration {
                    last: last.iteration,
                    got: record.iteration,
                });
            }
            if record.sim_time < last.sim_time {
                return Err(Error::NonMonotoneTime {
                    last: last.sim_time,
                    got: record.sim_time,
                });
            }
            let delta = last.loss - record.loss;
            if delta > self.max_delta {
                self.max_delta = delta;
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[LossRecord] {
        &self.records
    }

    /// Largest single-iteration loss drop seen so far (0 if none).
    pub fn max_delta(&self) -> f64 {
        self.max_delta
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&LossRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }

    fn index_of(&self, iteration: u64) -> Option<usize> {
        self.records
            .binary_search_by_key(&iteration, |r| r.iteration)
            .ok()
    }

    /// Loss drop into iteration `k`, divided by the largest drop observed up
    /// to and including `k`. Negative drops map to 0.
    pub fn normalized_delta(&self, k: u64) -> Result<f64> {
        let prev = k.checked_sub(1).ok_or(Error::MissingRecord(0))?;
        let idx = self.index_of(k).ok_or(Error::MissingRecord(k))?;
        if idx == 0 || self.records[idx - 1].iteration != prev {
            return Err(Error::MissingRecord(prev));
        }
        let scale = self.records[..=idx]
            .windows(2)
            .map(|w| w[0].loss - w[1].loss)
            .fold(0.0_f64, f64::max);
        let delta = self.records[idx - 1].loss - self.records[idx].loss;
        Ok(normalize(delta, scale))
    }

    /// Normalized delta for every consecutive record pair, each scaled by the
    /// running maximum at that point.
    pub fn normalized_deltas(&self) -> Vec<f64> {
        let mut scale = 0.0_f64;
        self.records
            .windows(2)
            .map(|w| {
                let delta = w[0].loss - w[1].loss;
                scale = scale.max(delta);
                normalize(delta, scale)
            })
            .collect()
    }

    /// Observed (max - min) loss.
    pub fn observed_range(&self) -> f64 {
        let (lo, hi) = self
            .records
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.loss), hi.max(r.loss))
            });
        if self.records.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn min_loss(&self) -> Option<f64> {
        self.records.iter().map(|r| r.loss).reduce(f64::min)
    }

    /// A copy holding only the first `n` records.
    pub fn prefix(&self, n: usize) -> Self {
        let mut history = Self::new();
        for r in &self.records[..n.min(self.records.len())] {
            history.append(*r).expect("prefix of a valid history");
        }
        history
    }
}

fn normalize(delta: f64, scale: f64) -> f64 {
    if delta <= 0.0 || scale <= 0.0 {
        0.0
    } else {
        (delta / scale).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Admitted but holding no cores this epoch.
    Pending,
    Running,
    Converged,
    /// Stopped by an iteration limit or trace end without meeting the
    /// convergence criterion.
    Removed,
}

impl Phase {
    pub fn is_active(self) -> bool {
        matches!(self, Phase::Pending | Phase::Running)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobState {
    pub id: JobId,
    pub arrival_time: f64,
    pub history: LossHistory,
    pub phase: Phase,
    pub current_cores: u32,
    /// Continuous iteration count; the fractional part carries over between
    /// epochs.
    pub progress: f64,
}

impl JobState {
    pub fn new(id: JobId, arrival_time: f64) -> Self {
        Self {
            id,
            arrival_time,
            history: LossHistory::new(),
            phase: Phase::Pending,
            current_cores: 0,
            progress: 0.0,
        }
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.history.first().map(|r| r.loss)
    }

    pub fn current_loss(&self) -> Option<f64> {
        self.history.last().map(|r| r.loss)
    }

    /// Remaining distance to `asymptote` as a fraction of the initial
    /// distance, clamped to [0, 1].
    pub fn normalized_loss(&self, asymptote: f64) -> Result<f64> {
        let (initial, current) = match (self.initial_loss(), self.current_loss()) {
            (Some(i), Some(c)) => (i, c),
            _ => return Err(Error::EmptyHistory),
        };
        let span = initial - asymptote;
        if !(span > 0.0) {
            return Err(Error::ZeroQualityRange { initial, asymptote });
        }
        Ok(((current - asymptote) / span).clamp(0.0, 1.0))
    }
}

/// Cluster size and scheduling epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSpec {
    /// Total CPU cores.
    pub capacity: u32,
    /// Seconds between allocation decisions.
    pub epoch_length: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            capacity: 640,
            epoch_length: 2.0,
        }
    }
}

impl ClusterSpec {
    pub fn new(capacity: u32, epoch_length: f64) -> Result<Self> {
        let spec = Self {
            capacity,
            epoch_length,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::InvalidConfig("capacity must be at least 1".into()));
        }
        if !(self.epoch_length > 0.0 && self.epoch_length.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epoch_length must be positive, got {}",
                self.epoch_length
            )));
        }
        Ok(())
    }
}
