use slaq_core::metrics::{export_csv, read_csv};
use slaq_core::scheduler::Policy;
use slaq_core::simulator::{
    generate_workload, run_simulation, run_simulation_with_trace, SimConfig, Simulation,
    WorkloadSpec,
};

fn small(policy: Policy, seed: u64) -> SimConfig {
    SimConfig {
        policy,
        duration: 1500.0,
        measure_latency: false,
        workload: WorkloadSpec {
            n_jobs: 30,
            seed,
            ..WorkloadSpec::default()
        },
        ..SimConfig::default()
    }
}

#[test]
fn core_seconds_never_exceed_cluster_time() {
    for policy in [Policy::Slaq, Policy::Fair] {
        let cfg = small(policy, 3);
        let bundle = run_simulation(&cfg).unwrap();
        let used: f64 = bundle.job_summaries.iter().map(|j| j.total_core_seconds).sum();
        let end = bundle.time_series.last().unwrap().sim_time + cfg.cluster.epoch_length;
        assert!(used <= f64::from(cfg.cluster.capacity) * end + 1e-6, "{policy}: {used}");
        assert!(used > 0.0);
    }
}

#[test]
fn summaries_cover_every_admitted_job_in_order() {
    let cfg = small(Policy::Slaq, 4);
    let workload = generate_workload(&cfg.workload).unwrap();
    let bundle = run_simulation(&cfg).unwrap();
    assert_eq!(bundle.job_summaries.len(), workload.len());
    for (s, w) in bundle.job_summaries.iter().zip(&workload) {
        assert_eq!(s.job_id, w.id);
        assert!(s.arrival_s >= w.arrival);
        if let (Some(a), Some(b)) = (s.time_to_90pct_s, s.time_to_95pct_s) {
            assert!(a <= b);
        }
    }
}

#[test]
fn time_series_is_bounded_and_on_epoch_boundaries() {
    let cfg = small(Policy::Fair, 5);
    let bundle = run_simulation(&cfg).unwrap();
    for pair in bundle.time_series.windows(2) {
        let epochs = (pair[1].sim_time - pair[0].sim_time) / cfg.cluster.epoch_length;
        assert!(epochs >= 1.0 - 1e-9 && (epochs - epochs.round()).abs() < 1e-9);
    }
    for s in &bundle.time_series {
        assert!((0.0..=1.0).contains(&s.avg_normalized_loss));
        let total = s.shares.high + s.shares.medium + s.shares.low;
        assert!(total == 0.0 || (total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn stepping_by_hand_matches_run() {
    let cfg = small(Policy::Slaq, 6);
    let mut sim = Simulation::new(cfg.clone()).unwrap();
    while !sim.is_finished() {
        let plan = sim.plan();
        assert!(plan.total() <= u64::from(cfg.cluster.capacity));
        sim.advance_epoch(&plan).unwrap();
    }
    let manual: Vec<_> = sim
        .into_metrics()
        .job_summaries
        .into_iter()
        .map(|j| (j.job_id, j.completion_s))
        .collect();
    let auto: Vec<_> = run_simulation(&cfg)
        .unwrap()
        .job_summaries
        .into_iter()
        .map(|j| (j.job_id, j.completion_s))
        .collect();
    assert_eq!(manual, auto);
}

#[test]
fn exported_metrics_read_back() {
    let (bundle, trace) = run_simulation_with_trace(&small(Policy::Slaq, 7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_csv(&bundle, dir.path()).unwrap();
    let back = read_csv(dir.path()).unwrap();
    assert_eq!(back.time_series.len(), bundle.time_series.len());
    assert_eq!(back.job_summaries.len(), bundle.job_summaries.len());
    assert_eq!(trace.jobs.len(), bundle.job_summaries.len());
}

#[test]
fn seeds_change_the_workload() {
    let a = run_simulation(&small(Policy::Slaq, 8)).unwrap();
    let b = run_simulation(&small(Policy::Slaq, 9)).unwrap();
    assert_ne!(a, b);
}
