//! Command-line front end: `simulate`, `fit`, `bench-sched` and `replay`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod bench;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use bench::{bench_allocations, synthesize_bench, BenchInstance};

use crate::error::Error;
use crate::loss::ClusterSpec;
use crate::metrics::{export_csv, mean, MetricsBundle};
use crate::predictor::{backtest_error, select_model, CurveParams, Family, FitConfig};
use crate::scheduler::Policy;
use crate::simulator::{
    generate_workload, replay_trace_with, workload_fingerprint, ReplayOptions, SimConfig,
    Simulation, Trace, WorkloadSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Everything a `simulate` or `replay` run reads from its TOML file. Every
/// key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub policy: Policy,
    pub duration: f64,
    pub metrics_interval: Option<f64>,
    pub family_hint: bool,
    pub measure_latency: bool,
    pub cluster: ClusterSpec,
    pub workload: WorkloadSpec,
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            out_dir: PathBuf::from("results"),
            policy: sim.policy,
            duration: sim.duration,
            metrics_interval: sim.metrics_interval,
            family_hint: sim.family_hint,
            measure_latency: sim.measure_latency,
            cluster: sim.cluster,
            workload: sim.workload,
            fit: sim.fit,
        }
    }
}

impl RunConfig {
    /// `"default"` gives the built-in configuration; anything else is read
    /// as a TOML file.
    pub fn load(source: &str) -> Result<Self, Error> {
        if source == "default" {
            return Ok(Self::default());
        }
        let path = Path::new(source);
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            cluster: self.cluster,
            policy: self.policy,
            workload: self.workload.clone(),
            duration: self.duration,
            metrics_interval: self.metrics_interval,
            fit: self.fit,
            family_hint: self.family_hint,
            measure_latency: self.measure_latency,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "slaq", version, about = "Quality-driven scheduling simulator for ML training jobs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Slaq,
    Fair,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Auto,
    Sublinear,
    Exponential,
}

impl FamilyArg {
    fn hint(self) -> Option<Family> {
        match self {
            FamilyArg::Auto => None,
            FamilyArg::Sublinear => Some(Family::Sublinear),
            FamilyArg::Exponential => Some(Family::Exponential),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a synthetic workload and write metrics CSVs
    Simulate {
        /// TOML config file, or `default`
        #[arg(long, default_value = "default")]
        config: String,
        /// `both` runs SLAQ and Fair on the same workload into sibling directories
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the reported losses as `trace.csv`
        #[arg(long)]
        emit_trace: bool,
    },
    /// Fit every job of a loss trace and report parameters and backtest error
    Fit {
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        family: FamilyArg,
        #[arg(long, default_value_t = 10)]
        horizon: u64,
    },
    /// Time allocate_slaq on synthesized job sets
    BenchSched {
        #[arg(long, default_value_t = 1000)]
        jobs: usize,
        #[arg(long, default_value_t = 4096)]
        cores: u32,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Drive the simulator from a recorded loss trace
    Replay {
        trace: PathBuf,
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-job core cap; defaults to the cluster capacity
        #[arg(long)]
        max_parallelism: Option<u32>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parses `args` (including the program name) and runs the command,
/// writing normal output to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Simulate {
            config,
            policy,
            seed,
            duration,
            jobs,
            out: out_dir,
            emit_trace,
        } => {
            let mut cfg = RunConfig::load(&config).map_err(usage)?;
            if let Some(seed) = seed {
                cfg.workload.seed = seed;
            }
            if let Some(d) = duration {
                cfg.duration = d;
            }
            if let Some(n) = jobs {
                cfg.workload.n_jobs = n;
            }
            if let Some(dir) = out_dir {
                cfg.out_dir = dir;
            }
            simulate(&cfg, policy, emit_trace, out)
        }
        Command::Fit {
            trace,
            family,
            horizon,
        } => fit(&trace, family.hint(), horizon, out),
        Command::BenchSched {
            jobs,
            cores,
            trials,
            seed,
        } => bench_sched(jobs, cores, trials, seed, out),
        Command::Replay {
            trace,
            config,
            policy,
            duration,
            out: out_dir,
            max_parallelism,
        } => {
            let mut cfg = RunConfig::load(&config).map_err(usage)?;
            if let Some(d) = duration {
                cfg.duration = d;
            }
            if let Some(dir) = out_dir {
                cfg.out_dir = dir;
            }
            replay(&cfg, &trace, policy, max_parallelism, out)
        }
    }
}

fn policies(arg: Option<PolicyArg>, configured: Policy) -> Vec<Policy> {
    match arg {
        None => vec![configured],
        Some(PolicyArg::Slaq) => vec![Policy::Slaq],
        Some(PolicyArg::Fair) => vec![Policy::Fair],
        Some(PolicyArg::Both) => vec![Policy::Slaq, Policy::Fair],
    }
}

fn output_dir(base: &Path, policy: Policy, paired: bool) -> PathBuf {
    if paired {
        base.join(policy.as_str())
    } else {
        base.to_path_buf()
    }
}

fn simulate(
    cfg: &RunConfig,
    policy: Option<PolicyArg>,
    emit_trace: bool,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let base = cfg.sim();
    base.validate().map_err(usage)?;
    let workload = generate_workload(&base.workload).map_err(usage)?;
    let fingerprint = workload_fingerprint(&workload);
    let runs = policies(policy, cfg.policy);
    for &p in &runs {
        let sim_cfg = SimConfig { policy: p, ..base.clone() };
        let mut sim = Simulation::from_workload(sim_cfg, &workload).map_err(runtime)?;
        while sim.step().map_err(runtime)? {}
        let dir = output_dir(&cfg.out_dir, p, runs.len() > 1);
        if emit_trace {
            fs::create_dir_all(&dir).map_err(|e| runtime(Error::io(&dir, e)))?;
            sim.export_trace()
                .write_to(&dir.join("trace.csv"))
                .map_err(runtime)?;
        }
        let bundle = sim.into_metrics();
        export_csv(&bundle, &dir).map_err(runtime)?;
        summarize(out, p, &bundle, &fingerprint, &dir).map_err(runtime)?;
    }
    Ok(())
}

fn replay(
    cfg: &RunConfig,
    path: &Path,
    policy: Option<PolicyArg>,
    max_parallelism: Option<u32>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let base = cfg.sim();
    base.validate().map_err(usage)?;
    let trace = Trace::read(path).map_err(usage)?;
    let opts = ReplayOptions {
        max_parallelism,
        ..ReplayOptions::default()
    };
    let runs = policies(policy, cfg.policy);
    for &p in &runs {
        let sim_cfg = SimConfig { policy: p, ..base.clone() };
        let bundle = replay_trace_with(&trace, &sim_cfg, &opts).map_err(runtime)?;
        let dir = output_dir(&cfg.out_dir, p, runs.len() > 1);
        export_csv(&bundle, &dir).map_err(runtime)?;
        summarize(out, p, &bundle, &path.display().to_string(), &dir).map_err(runtime)?;
    }
    Ok(())
}

fn summarize(
    out: &mut dyn Write,
    policy: Policy,
    bundle: &MetricsBundle,
    source: &str,
    dir: &Path,
) -> std::io::Result<()> {
    let loss = mean(bundle.time_series.iter().map(|s| s.avg_normalized_loss));
    let t90: Vec<f64> = bundle
        .job_summaries
        .iter()
        .filter_map(|j| j.time_to_90pct_s)
        .collect();
    let finished = bundle
        .job_summaries
        .iter()
        .filter(|j| j.completion_s.is_some())
        .count();
    let fmt = |x: Option<f64>, unit: &str| x.map_or("n/a".to_string(), |v| format!("{v:.4}{unit}"));
    writeln!(
        out,
        "{policy}: workload {source}, {} jobs admitted, {finished} finished. \
         Time-averaged normalized loss {}, mean time to 90% {} over {} jobs, \
         scheduler latency p50 {} p99 {}. Metrics in {}.",
        bundle.job_summaries.len(),
        fmt(loss, ""),
        fmt(mean(t90.iter().copied()), " s"),
        t90.len(),
        fmt(bundle.latency_percentile(50.0), " ms"),
        fmt(bundle.latency_percentile(99.0), " ms"),
        dir.display(),
    )
}

fn params_text(params: &CurveParams) -> String {
    match params {
        CurveParams::Sublinear(p) => format!("a={} b={} c={} d={}", p.a, p.b, p.c, p.d),
        CurveParams::Exponential(p) => format!("mu={} b={} c={}", p.mu, p.b, p.c),
    }
}

fn fit(path: &Path, hint: Option<Family>, horizon: u64, out: &mut dyn Write) -> Result<(), Failure> {
    let trace = Trace::read(path).map_err(usage)?;
    let cfg = FitConfig::default();
    for job in &trace.jobs {
        let history = job.history();
        let line = match select_model(&history, &cfg, hint) {
            Ok(model) => {
                let backtest = match backtest_error(&history, &cfg, horizon, hint) {
                    Ok(e) => format!("{e}"),
                    Err(e) => format!("\"{e}\""),
                };
                format!(
                    "job={} family={} {} rms={} points={} backtest_h{horizon}={backtest}",
                    job.id,
                    model.family(),
                    params_text(&model.params),
                    model.weighted_rms_residual,
                    model.n_points,
                )
            }
            Err(e) => format!("job={} error=\"{e}\"", job.id),
        };
        writeln!(out, "{line}").map_err(runtime)?;
    }
    Ok(())
}

fn bench_sched(
    jobs: usize,
    cores: u32,
    trials: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    if jobs == 0 || trials == 0 {
        return Err(usage("--jobs and --trials must be at least 1"));
    }
    if (cores as usize) < jobs {
        return Err(usage(format!("--cores ({cores}) must be at least --jobs ({jobs})")));
    }
    let instance = synthesize_bench(jobs, cores, seed).map_err(usage)?;
    let millis = bench_allocations(&instance, trials);
    for (i, ms) in millis.iter().enumerate() {
        writeln!(out, "trial={i} millis={ms:.4}").map_err(runtime)?;
    }
    let pct = |q| crate::metrics::percentile(&millis, q).unwrap_or(f64::NAN);
    writeln!(
        out,
        "jobs={jobs} cores={cores} trials={trials} seed={seed} mean_ms={:.4} p50_ms={:.4} p99_ms={:.4}",
        mean(millis.iter().copied()).unwrap_or(f64::NAN),
        pct(50.0),
        pct(99.0),
    )
    .map_err(runtime)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("slaq").chain(args.iter().copied()), &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn default_run_config_matches_reference_setup() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.cluster.capacity, 640);
        assert_eq!(cfg.workload.n_jobs, 160);
        assert_eq!(cfg.workload.mean_interarrival, 15.0);
        cfg.sim().validate().unwrap();
    }

    #[test]
    fn config_file_overrides_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "policy = \"fair\"\nduration = 100.0\n[cluster]\ncapacity = 64\n[workload]\nn_jobs = 5\nwork_per_iteration = [10.0, 20.0]\n",
        )
        .unwrap();
        let cfg = RunConfig::load(path.to_str().unwrap()).unwrap();
        assert_eq!(cfg.policy, Policy::Fair);
        assert_eq!(cfg.cluster.capacity, 64);
        assert_eq!(cfg.cluster.epoch_length, 2.0);
        assert_eq!(cfg.workload.n_jobs, 5);
        assert_eq!(cfg.workload.mean_interarrival, 15.0);

        fs::write(&path, "[cluster]\ncapacty = 64\n").unwrap();
        let err = RunConfig::load(path.to_str().unwrap()).unwrap_err();
        assert!(err.to_string().contains("capacty"), "{err}");
    }

    #[test]
    fn zero_duration_is_a_usage_error() {
        let (code, _, err) = run_cli(&["simulate", "--duration", "0"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("duration"));
    }

    #[test]
    fn missing_config_is_a_usage_error() {
        let (code, _, _) = run_cli(&["simulate", "--config", "/nonexistent/run.toml"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let (code, _, _) = run_cli(&["simulate", "--bogus"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn bench_rejects_fewer_cores_than_jobs() {
        let (code, _, err) = run_cli(&["bench-sched", "--jobs", "10", "--cores", "5"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--cores"));
    }

    #[test]
    fn bench_single_job() {
        let (code, out, _) = run_cli(&["bench-sched", "--jobs", "1", "--cores", "1", "--trials", "3"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().filter(|l| l.starts_with("trial=")).count(), 3);
        assert!(out.contains("p99_ms="));
    }

    #[test]
    fn fit_reports_family_and_short_histories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut text = String::from("job_id,iteration,loss,core_seconds_per_iteration,arrival_s\n");
        for k in 0..30 {
            text.push_str(&format!("0,{k},{},1,0\n", 0.5f64.powi(k)));
        }
        for k in 0..3 {
            text.push_str(&format!("1,{k},{},1,0\n", 3.0 - k as f64));
        }
        fs::write(&path, text).unwrap();
        let (code, out, _) = run_cli(&["fit", path.to_str().unwrap(), "--family", "exponential"]);
        assert_eq!(code, EXIT_OK);
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[0].starts_with("job=0 family=exponential mu=0.5"), "{}", lines[0]);
        assert!(lines[1].contains("insufficient history"), "{}", lines[1]);
    }

    #[test]
    fn fit_on_unreadable_file_is_a_usage_error() {
        let (code, _, _) = run_cli(&["fit", "/nonexistent/trace.csv"]);
        assert_eq!(code, EXIT_USAGE);
    }
}
