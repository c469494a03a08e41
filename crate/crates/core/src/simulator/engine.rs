use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::trace::{Trace, TraceJob};
use super::workload::{generate_workload, JobProfile, WorkloadJob};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::loss::{JobId, JobState, LossRecord, Phase};
use crate::metrics::{
    self, group_shares, time_to_fraction, JobSummary, LatencySample, MetricsBundle, TimeSample,
};
use crate::predictor::{select_model, Family, FittedModel};
use crate::scheduler::{iterations_in_epoch, AllocationPlan, Candidate, CostModel, Policy};

/// Consecutive sub-threshold drops that mark a job converged.
const QUIET_DELTAS: u32 = 3;

/// Replay settings the trace format itself cannot carry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayOptions {
    /// Per-job core cap; defaults to the cluster capacity.
    pub max_parallelism: Option<u32>,
    /// Known asymptotes. Jobs listed here are normalized against them
    /// instead of their fitted asymptote.
    pub asymptotes: BTreeMap<JobId, f64>,
}

enum Truth {
    Synthetic(JobProfile),
    Replay { trace: TraceJob, cap: u32 },
}

struct Noise {
    rng: ChaCha8Rng,
    dist: Normal<f64>,
    clip: f64,
}

struct SimJob {
    state: JobState,
    truth: Truth,
    hint: Option<Family>,
    known_asymptote: Option<f64>,
    noise: Option<Noise>,
    epsilon: f64,
    max_iterations: u64,
    threshold: f64,
    model: Option<FittedModel>,
    fitted_len: usize,
    waiting_epochs: u32,
    quiet: u32,
    core_seconds: f64,
    finish_time: Option<f64>,
}

impl SimJob {
    fn synthetic(job: &WorkloadJob, cfg: &SimConfig) -> Result<Self> {
        let p = job.profile;
        let sigma = p.noise_sigma * p.loss_range();
        let noise = if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.workload.seed);
            rng.set_stream(job.id.0 + 1);
            Some(Noise {
                rng,
                dist: Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?,
                clip: 4.0 * sigma,
            })
        } else {
            None
        };
        Ok(Self {
            hint: cfg.family_hint.then_some(p.family),
            known_asymptote: Some(p.asymptote()),
            noise,
            epsilon: p.convergence_epsilon,
            max_iterations: p.max_iterations,
            ..Self::blank(job.id, job.arrival, Truth::Synthetic(p))
        })
    }

    fn replay(trace: &TraceJob, cfg: &SimConfig, opts: &ReplayOptions) -> Self {
        let cap = opts.max_parallelism.unwrap_or(cfg.cluster.capacity).max(1);
        Self {
            known_asymptote: opts.asymptotes.get(&trace.id).copied(),
            epsilon: cfg.workload.convergence_epsilon,
            max_iterations: cfg.workload.max_iterations,
            ..Self::blank(
                trace.id,
                trace.arrival,
                Truth::Replay {
                    trace: trace.clone(),
                    cap,
                },
            )
        }
    }

    fn blank(id: JobId, arrival: f64, truth: Truth) -> Self {
        Self {
            state: JobState::new(id, arrival),
            truth,
            hint: None,
            known_asymptote: None,
            noise: None,
            epsilon: 0.0,
            max_iterations: u64::MAX,
            threshold: 0.0,
            model: None,
            fitted_len: 0,
            waiting_epochs: 0,
            quiet: 0,
            core_seconds: 0.0,
            finish_time: None,
        }
    }

    fn id(&self) -> JobId {
        self.state.id
    }

    fn reported_loss(&mut self, k: u64) -> f64 {
        match &self.truth {
            Truth::Synthetic(p) => {
                let truth = p.true_loss(k as f64);
                match &mut self.noise {
                    Some(n) => truth + n.dist.sample(&mut n.rng).clamp(-n.clip, n.clip),
                    None => truth,
                }
            }
            Truth::Replay { trace, .. } => trace.loss_at(k as f64),
        }
    }

    fn exhausted(&self, k: u64) -> bool {
        match &self.truth {
            Truth::Synthetic(_) => false,
            Truth::Replay { trace, .. } => k > trace.last_iteration(),
        }
    }

    fn cost(&self) -> CostModel {
        match &self.truth {
            Truth::Synthetic(p) => p.cost,
            Truth::Replay { trace, cap } => {
                let next = self.state.progress.floor() as u64 + 1;
                CostModel::new(trace.cost_at(next), *cap)
            }
        }
    }

    fn admit(&mut self, now: f64) -> Result<()> {
        let loss = self.reported_loss(0);
        self.state.history.append(LossRecord::new(0, now, loss))?;
        let floor = match (&self.truth, self.known_asymptote) {
            (_, Some(a)) => a,
            (Truth::Replay { trace, .. }, None) => {
                trace.losses.iter().copied().fold(f64::INFINITY, f64::min)
            }
            (Truth::Synthetic(p), None) => p.asymptote(),
        };
        self.threshold = self.epsilon * (loss - floor).max(0.0);
        Ok(())
    }

    fn finish(&mut self, phase: Phase, time: f64, k: u64) {
        self.state.phase = phase;
        self.state.progress = k as f64;
        self.state.current_cores = 0;
        self.finish_time = Some(time);
    }

    /// Asymptote used for normalized-loss metrics.
    fn metric_asymptote(&self) -> Option<f64> {
        self.known_asymptote
            .or_else(|| self.model.as_ref().map(FittedModel::asymptote))
    }

    fn normalized(&self, loss: f64) -> f64 {
        let h = &self.state.history;
        let Some(initial) = h.first().map(|r| r.loss) else {
            return 1.0;
        };
        let fallback = || h.min_loss().map(|m| m - 0.1 * h.observed_range());
        for asymptote in [self.metric_asymptote(), fallback()].into_iter().flatten() {
            let span = initial - asymptote;
            if span > 0.0 {
                return ((loss - asymptote) / span).clamp(0.0, 1.0);
            }
        }
        1.0
    }

    fn current_normalized(&self) -> f64 {
        self.state.current_loss().map_or(1.0, |l| self.normalized(l))
    }

    fn family(&self) -> Option<Family> {
        match &self.truth {
            Truth::Synthetic(p) => Some(p.family),
            Truth::Replay { .. } => self.model.as_ref().map(FittedModel::family),
        }
    }

    fn summary(&self) -> JobSummary {
        let arrival = self.state.arrival_time;
        let trajectory: Vec<(f64, f64)> = self
            .state
            .history
            .records()
            .iter()
            .map(|r| (r.sim_time - arrival, self.normalized(r.loss)))
            .collect();
        JobSummary {
            job_id: self.id(),
            arrival_s: arrival,
            family: self.family(),
            time_to_90pct_s: time_to_fraction(&trajectory, 0.90),
            time_to_95pct_s: time_to_fraction(&trajectory, 0.95),
            completion_s: self.finish_time.map(|t| t - arrival),
            total_core_seconds: self.core_seconds,
        }
    }
}

/// One simulation run. Jobs are admitted at the first epoch boundary at or
/// after their arrival; each epoch fits models, allocates, samples metrics
/// and advances every admitted job.
pub struct Simulation {
    cfg: SimConfig,
    /// Ordered by arrival, then id.
    jobs: Vec<SimJob>,
    index: BTreeMap<JobId, usize>,
    admitted: usize,
    epoch: u64,
    next_sample: f64,
    bundle: MetricsBundle,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let workload = generate_workload(&cfg.workload)?;
        Self::from_workload(cfg, &workload)
    }

    pub fn from_workload(cfg: SimConfig, workload: &[WorkloadJob]) -> Result<Self> {
        cfg.validate()?;
        let jobs = workload
            .iter()
            .map(|j| SimJob::synthetic(j, &cfg))
            .collect::<Result<Vec<_>>>()?;
        Self::with_jobs(cfg, jobs)
    }

    pub fn from_trace(cfg: SimConfig, trace: &Trace, opts: &ReplayOptions) -> Result<Self> {
        cfg.validate()?;
        let jobs = trace
            .jobs
            .iter()
            .map(|j| SimJob::replay(j, &cfg, opts))
            .collect();
        Self::with_jobs(cfg, jobs)
    }

    fn with_jobs(cfg: SimConfig, mut jobs: Vec<SimJob>) -> Result<Self> {
        jobs.sort_by(|a, b| {
            a.state
                .arrival_time
                .total_cmp(&b.state.arrival_time)
                .then(a.id().cmp(&b.id()))
        });
        let mut index = BTreeMap::new();
        for (i, job) in jobs.iter().enumerate() {
            if index.insert(job.id(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate job id {}", job.id())));
            }
        }
        let mut sim = Self {
            cfg,
            jobs,
            index,
            admitted: 0,
            epoch: 0,
            next_sample: 0.0,
            bundle: MetricsBundle::default(),
        };
        sim.admit_arrivals()?;
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn clock(&self) -> f64 {
        self.epoch as f64 * self.cfg.cluster.epoch_length
    }

    /// Admitted jobs, in arrival order.
    pub fn jobs(&self) -> impl Iterator<Item = &JobState> {
        self.jobs[..self.admitted].iter().map(|j| &j.state)
    }

    pub fn job(&self, id: JobId) -> Option<&JobState> {
        self.index
            .get(&id)
            .filter(|&&i| i < self.admitted)
            .map(|&i| &self.jobs[i].state)
    }

    fn active(&self) -> impl Iterator<Item = &SimJob> {
        self.jobs[..self.admitted]
            .iter()
            .filter(|j| j.state.phase.is_active())
    }

    pub fn is_finished(&self) -> bool {
        self.clock() >= self.cfg.duration
            || (self.admitted == self.jobs.len() && self.active().next().is_none())
    }

    fn admit_arrivals(&mut self) -> Result<()> {
        let now = self.clock();
        while self.admitted < self.jobs.len() && self.jobs[self.admitted].state.arrival_time <= now {
            let job = &mut self.jobs[self.admitted];
            job.admit(now)
                .map_err(|e| e.context(format!("admitting job {}", job.id())))?;
            self.admitted += 1;
        }
        Ok(())
    }

    fn refresh_models(&mut self) {
        let needs_models = |j: &SimJob| {
            self.cfg.policy == Policy::Slaq || j.known_asymptote.is_none()
        };
        let fit = &self.cfg.fit;
        for job in self.jobs[..self.admitted].iter_mut() {
            let len = job.state.history.len();
            if !job.state.phase.is_active()
                || !needs_models(job)
                || len < fit.min_history
                || len == job.fitted_len
            {
                continue;
            }
            job.model = select_model(&job.state.history, fit, job.hint).ok();
            job.fitted_len = len;
        }
    }

    /// Refreshes fitted models and asks the configured policy for this
    /// epoch's allocation.
    pub fn plan(&mut self) -> AllocationPlan {
        self.refresh_models();
        let candidates: Vec<Candidate<'_>> = self
            .active()
            .map(|j| Candidate {
                job: &j.state,
                model: j.model.as_ref(),
                cost: j.cost(),
                waiting_epochs: j.waiting_epochs,
            })
            .collect();
        self.cfg
            .policy
            .allocate(&candidates, &self.cfg.cluster, self.epoch)
    }

    fn sample(&mut self, plan: &AllocationPlan) {
        let now = self.clock();
        if now + 1e-9 < self.next_sample {
            return;
        }
        let interval = self.cfg.metrics_interval();
        while self.next_sample <= now + 1e-9 {
            self.next_sample += interval;
        }
        let losses: Vec<(JobId, f64)> = self
            .active()
            .map(|j| (j.id(), j.current_normalized()))
            .collect();
        let Some(avg) = metrics::mean(losses.iter().map(|&(_, l)| l)) else {
            return;
        };
        self.bundle.time_series.push(TimeSample {
            sim_time: now,
            avg_normalized_loss: avg,
            running_jobs: losses.len(),
            shares: group_shares(&losses, plan),
        });
    }

    /// Runs every admitted job for one epoch under `plan`, then moves the
    /// clock forward and admits the jobs that arrived meanwhile.
    pub fn advance_epoch(&mut self, plan: &AllocationPlan) -> Result<()> {
        for (&id, &cores) in &plan.assignments {
            let known = self
                .index
                .get(&id)
                .is_some_and(|&i| i < self.admitted && self.jobs[i].state.phase.is_active());
            if !known && cores > 0 {
                return Err(Error::UnknownJob(id));
            }
        }
        if plan.total() > u64::from(self.cfg.cluster.capacity) {
            return Err(Error::InvalidConfig(format!(
                "plan for epoch {} grants {} cores on a {}-core cluster",
                self.epoch,
                plan.total(),
                self.cfg.cluster.capacity
            )));
        }
        let start = self.clock();
        let epoch_length = self.cfg.cluster.epoch_length;
        for job in self.jobs[..self.admitted].iter_mut() {
            if !job.state.phase.is_active() {
                continue;
            }
            let cores = plan.cores(job.id());
            job.state.current_cores = cores;
            job.core_seconds += f64::from(cores) * epoch_length;
            if cores == 0 {
                job.state.phase = Phase::Pending;
                job.waiting_epochs += 1;
                continue;
            }
            job.state.phase = Phase::Running;
            job.waiting_epochs = 0;
            let step = iterations_in_epoch(&job.cost(), cores, epoch_length);
            let old = job.state.progress;
            job.state.progress = old + step;
            let last = job.state.progress.floor() as u64;
            let mut k = old.floor() as u64 + 1;
            while k <= last {
                let time = start + (k as f64 - old) / step * epoch_length;
                if job.exhausted(k) {
                    job.finish(Phase::Removed, time, k - 1);
                    break;
                }
                let prev = job.state.current_loss().expect("admitted jobs have a record");
                let loss = job.reported_loss(k);
                job.state
                    .history
                    .append(LossRecord::new(k, time, loss))
                    .map_err(|e| e.context(format!("epoch {}, job {}", self.epoch, job.id())))?;
                if prev - loss < job.threshold {
                    job.quiet += 1;
                } else {
                    job.quiet = 0;
                }
                if job.quiet >= QUIET_DELTAS {
                    job.finish(Phase::Converged, time, k);
                    break;
                }
                if k >= job.max_iterations {
                    job.finish(Phase::Removed, time, k);
                    break;
                }
                k += 1;
            }
        }
        self.epoch += 1;
        self.admit_arrivals()
    }

    /// Plans, samples and advances one epoch. Returns `false` once the run
    /// is over.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        let started = Instant::now();
        let plan = self.plan();
        let millis = if self.cfg.measure_latency {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        self.bundle.scheduler_latencies.push(LatencySample {
            epoch: self.epoch,
            millis,
        });
        self.sample(&plan);
        self.advance_epoch(&plan)?;
        Ok(true)
    }

    pub fn run(mut self) -> Result<MetricsBundle> {
        while self.step()? {}
        Ok(self.into_metrics())
    }

    pub fn into_metrics(self) -> MetricsBundle {
        let mut bundle = self.bundle;
        bundle.job_summaries = self.jobs[..self.admitted].iter().map(SimJob::summary).collect();
        bundle.job_summaries.sort_by_key(|s| s.job_id);
        bundle
    }

    /// Reported losses of every admitted job as a replayable trace.
    pub fn export_trace(&self) -> Trace {
        let mut admitted: Vec<&SimJob> = self.jobs[..self.admitted].iter().collect();
        admitted.sort_by_key(|j| j.id());
        let mut trace = Trace::default();
        for job in admitted {
            let work = match &job.truth {
                Truth::Synthetic(p) => p.cost.work_per_iteration,
                Truth::Replay { trace: t, .. } => t.core_seconds[0],
            };
            trace.push_job(job.id(), job.state.arrival_time, &job.state.history, work);
        }
        trace
    }

    /// Ground-truth asymptotes of synthetic jobs.
    pub fn known_asymptotes(&self) -> BTreeMap<JobId, f64> {
        self.jobs
            .iter()
            .filter_map(|j| j.known_asymptote.map(|a| (j.id(), a)))
            .collect()
    }
}

pub fn run_simulation(cfg: &SimConfig) -> Result<MetricsBundle> {
    Simulation::new(cfg.clone())?.run()
}

/// Runs the simulation and also returns its reported losses as a trace.
pub fn run_simulation_with_trace(cfg: &SimConfig) -> Result<(MetricsBundle, Trace)> {
    let mut sim = Simulation::new(cfg.clone())?;
    while sim.step()? {}
    let trace = sim.export_trace();
    Ok((sim.into_metrics(), trace))
}

pub fn replay_trace(path: &Path, cfg: &SimConfig) -> Result<MetricsBundle> {
    let trace = Trace::read(path)?;
    replay_trace_with(&trace, cfg, &ReplayOptions::default())
}

pub fn replay_trace_with(
    trace: &Trace,
    cfg: &SimConfig,
    opts: &ReplayOptions,
) -> Result<MetricsBundle> {
    Simulation::from_trace(cfg.clone(), trace, opts)?.run()
}
