use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{ClusterSpec, JobState, LossHistory, Phase};
use crate::predictor::FittedModel;
use crate::scheduler::{allocate_slaq, Candidate, CostModel};
use crate::simulator::{generate_workload, WorkloadSpec};

/// Fitted job states for timing the allocator in isolation.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchInstance {
    pub spec: ClusterSpec,
    pub jobs: Vec<JobState>,
    pub models: Vec<FittedModel>,
    pub costs: Vec<CostModel>,
}

impl BenchInstance {
    pub fn candidates(&self) -> Vec<Candidate<'_>> {
        self.jobs
            .iter()
            .zip(&self.models)
            .zip(&self.costs)
            .map(|((job, model), &cost)| Candidate {
                job,
                model: Some(model),
                cost,
                waiting_epochs: 0,
            })
            .collect()
    }
}

/// Draws `jobs` synthetic jobs, each part-way along its true curve with that
/// curve standing in for the fitted model. Deterministic in `seed`.
pub fn synthesize_bench(jobs: usize, cores: u32, seed: u64) -> Result<BenchInstance> {
    let workload = generate_workload(&WorkloadSpec {
        n_jobs: jobs,
        seed,
        ..WorkloadSpec::default()
    })?;
    let mut instance = BenchInstance {
        spec: ClusterSpec::new(cores, 2.0)?,
        jobs: Vec::with_capacity(jobs),
        models: Vec::with_capacity(jobs),
        costs: Vec::with_capacity(jobs),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    for w in &workload {
        let p = w.profile;
        let done: u64 = rng.random_range(1..=120);
        let losses: Vec<f64> = (0..=done).map(|k| p.true_loss(k as f64)).collect();
        let mut job = JobState::new(w.id, w.arrival);
        job.history = LossHistory::from_losses(&losses);
        job.progress = done as f64;
        job.phase = Phase::Running;
        instance.jobs.push(job);
        instance.models.push(FittedModel {
            params: p.true_params,
            weighted_rms_residual: 0.0,
            n_points: losses.len(),
        });
        instance.costs.push(p.cost);
    }
    Ok(instance)
}

/// Wall-clock milliseconds of one `allocate_slaq` call per trial.
pub fn bench_allocations(instance: &BenchInstance, trials: usize) -> Vec<f64> {
    let candidates = instance.candidates();
    (0..trials)
        .map(|t| {
            let start = Instant::now();
            let plan = allocate_slaq(&candidates, &instance.spec, t as u64);
            let ms = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(plan);
            ms
        })
        .collect()
}
