//! Loss-trace files: recorded per-iteration losses that replace synthetic
//! ground truth during replay.
//!
//! Format: UTF-8 CSV with header
//! `job_id,iteration,loss,core_seconds_per_iteration,arrival_s`, one row per
//! iteration, `#` lines ignored.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::{JobId, LossHistory, LossRecord};

pub const TRACE_HEADER: [&str; 5] = [
    "job_id",
    "iteration",
    "loss",
    "core_seconds_per_iteration",
    "arrival_s",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceJob {
    pub id: JobId,
    pub arrival: f64,
    pub iterations: Vec<u64>,
    pub losses: Vec<f64>,
    pub core_seconds: Vec<f64>,
}

impl TraceJob {
    fn new(id: JobId, arrival: f64) -> Self {
        Self {
            id,
            arrival,
            iterations: Vec::new(),
            losses: Vec::new(),
            core_seconds: Vec::new(),
        }
    }

    pub fn last_iteration(&self) -> u64 {
        *self.iterations.last().expect("trace jobs are never empty")
    }

    /// Recorded loss, linearly interpolated between recorded iterations and
    /// held flat outside them.
    pub fn loss_at(&self, k: f64) -> f64 {
        let its = &self.iterations;
        let upper = its.partition_point(|&i| (i as f64) < k);
        if upper == 0 {
            return self.losses[0];
        }
        if upper == its.len() {
            return *self.losses.last().unwrap();
        }
        let (k0, k1) = (its[upper - 1] as f64, its[upper] as f64);
        if k1 == k {
            return self.losses[upper];
        }
        let (l0, l1) = (self.losses[upper - 1], self.losses[upper]);
        l0 + (l1 - l0) * (k - k0) / (k1 - k0)
    }

    /// Core-seconds of the first recorded iteration at or after `k`.
    pub fn cost_at(&self, k: u64) -> f64 {
        let idx = self.iterations.partition_point(|&i| i < k);
        self.core_seconds[idx.min(self.core_seconds.len() - 1)]
    }

    pub fn history(&self) -> LossHistory {
        LossHistory::from_records(
            self.iterations
                .iter()
                .zip(&self.losses)
                .map(|(&k, &l)| LossRecord::new(k, self.arrival, l)),
        )
        .expect("trace iterations are strictly increasing")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    /// Ordered by job id.
    pub jobs: Vec<TraceJob>,
}

impl Trace {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(file).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn parse(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| malformed(0, e))?.clone();
        if header.is_empty() || header.iter().all(str::is_empty) {
            return Err(Error::Trace {
                line: 1,
                message: "empty trace".into(),
            });
        }
        if header.iter().ne(TRACE_HEADER) {
            return Err(Error::Trace {
                line: header.position().map_or(1, |p| p.line()),
                message: format!("expected header `{}`", TRACE_HEADER.join(",")),
            });
        }

        let mut jobs: BTreeMap<JobId, TraceJob> = BTreeMap::new();
        for row in rdr.records() {
            let row = row.map_err(|e| malformed(0, e))?;
            let line = row.position().map_or(0, |p| p.line());
            if row.len() != TRACE_HEADER.len() {
                return Err(Error::Trace {
                    line,
                    message: format!("expected 5 fields, found {}", row.len()),
                });
            }
            let id = JobId(field(&row, 0, line)?);
            let iteration: u64 = field(&row, 1, line)?;
            let loss: f64 = field(&row, 2, line)?;
            let cost: f64 = field(&row, 3, line)?;
            let arrival: f64 = field(&row, 4, line)?;
            if !loss.is_finite() {
                return Err(Error::Trace {
                    line,
                    message: "loss must be finite".into(),
                });
            }
            if !(cost > 0.0 && cost.is_finite()) {
                return Err(Error::Trace {
                    line,
                    message: "core_seconds_per_iteration must be positive".into(),
                });
            }
            if !(arrival >= 0.0 && arrival.is_finite()) {
                return Err(Error::Trace {
                    line,
                    message: "arrival_s must be non-negative".into(),
                });
            }
            let job = jobs
                .entry(id)
                .or_insert_with(|| TraceJob::new(id, arrival));
            if job.arrival != arrival {
                return Err(Error::Trace {
                    line,
                    message: format!("job {id} arrival changes from {} to {arrival}", job.arrival),
                });
            }
            if let Some(&last) = job.iterations.last() {
                if iteration <= last {
                    return Err(Error::Trace {
                        line,
                        message: format!(
                            "job {id} iteration {iteration} does not follow {last}"
                        ),
                    });
                }
            }
            job.iterations.push(iteration);
            job.losses.push(loss);
            job.core_seconds.push(cost);
        }
        if jobs.is_empty() {
            return Err(Error::Trace {
                line: 1,
                message: "trace has no rows".into(),
            });
        }
        Ok(Trace {
            jobs: jobs.into_values().collect(),
        })
    }

    /// Writes the trace with full float precision.
    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", TRACE_HEADER.join(","))?;
        for job in &self.jobs {
            for i in 0..job.iterations.len() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    job.id, job.iterations[i], job.losses[i], job.core_seconds[i], job.arrival
                )?;
            }
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub(crate) fn push_job(
        &mut self,
        id: JobId,
        arrival: f64,
        history: &LossHistory,
        core_seconds: f64,
    ) {
        let mut job = TraceJob::new(id, arrival);
        for r in history.records() {
            job.iterations.push(r.iteration);
            job.losses.push(r.loss);
            job.core_seconds.push(core_seconds);
        }
        if !job.iterations.is_empty() {
            self.jobs.push(job);
        }
    }
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize, line: u64) -> Result<T> {
    row[idx].parse().map_err(|_| Error::Trace {
        line,
        message: format!("cannot parse {} from `{}`", TRACE_HEADER[idx], &row[idx]),
    })
}

fn malformed(line: u64, e: csv::Error) -> Error {
    let line = e.position().map_or(line, |p| p.line());
    Error::Trace {
        line,
        message: e.to_string(),
    }
}
