use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{GroupShare, JobSummary, LatencySample, MetricsBundle, TimeSample};
use crate::error::{Error, Result};
use crate::loss::JobId;

pub const TIMESERIES_HEADER: &str =
    "sim_time_s,avg_normalized_loss,running_jobs,share_high,share_medium,share_low";
pub const JOBS_HEADER: &str =
    "job_id,arrival_s,family,time_to_90pct_s,time_to_95pct_s,completion_s,total_core_seconds";
pub const LATENCY_HEADER: &str = "epoch,millis";

/// Formats `x` rounded to 6 significant digits, in the shortest form that
/// parses back to the rounded value.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("valid float");
    format!("{rounded}")
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig6).unwrap_or_default()
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `timeseries.csv`, `jobs.csv` and `sched_latency.csv` into `dir`,
/// creating it if needed.
pub fn export_csv(bundle: &MetricsBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    write_file(&dir.join("timeseries.csv"), |out| {
        writeln!(out, "{TIMESERIES_HEADER}")?;
        for s in &bundle.time_series {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                format_sig6(s.sim_time),
                format_sig6(s.avg_normalized_loss),
                s.running_jobs,
                format_sig6(s.shares.high),
                format_sig6(s.shares.medium),
                format_sig6(s.shares.low),
            )?;
        }
        Ok(())
    })?;

    let mut jobs: Vec<&JobSummary> = bundle.job_summaries.iter().collect();
    jobs.sort_by_key(|j| j.job_id);
    write_file(&dir.join("jobs.csv"), |out| {
        writeln!(out, "{JOBS_HEADER}")?;
        for j in jobs {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                j.job_id,
                format_sig6(j.arrival_s),
                j.family.map(|f| f.as_str()).unwrap_or(""),
                opt(j.time_to_90pct_s),
                opt(j.time_to_95pct_s),
                opt(j.completion_s),
                format_sig6(j.total_core_seconds),
            )?;
        }
        Ok(())
    })?;

    write_file(&dir.join("sched_latency.csv"), |out| {
        writeln!(out, "{LATENCY_HEADER}")?;
        for l in &bundle.scheduler_latencies {
            writeln!(out, "{},{}", l.epoch, format_sig6(l.millis))?;
        }
        Ok(())
    })
}

fn parse_err(path: &Path, line: usize, what: &str) -> Error {
    Error::InvalidConfig(format!("{}:{}: cannot parse {what}", path.display(), line))
}

fn rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(parse_err(path, 1, "header"));
    }
    Ok(lines
        .enumerate()
        .map(|(i, l)| (i + 2, l.split(',').map(str::to_owned).collect()))
        .collect())
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(path, line, what))
}

fn opt_num(path: &Path, line: usize, s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        num(path, line, s, what).map(Some)
    }
}

/// Parses the three files written by [`export_csv`].
pub fn read_csv(dir: &Path) -> Result<MetricsBundle> {
    let mut bundle = MetricsBundle::default();

    let path = dir.join("timeseries.csv");
    for (line, f) in rows(&path, TIMESERIES_HEADER)? {
        if f.len() != 6 {
            return Err(parse_err(&path, line, "row"));
        }
        bundle.time_series.push(TimeSample {
            sim_time: num(&path, line, &f[0], "sim_time_s")?,
            avg_normalized_loss: num(&path, line, &f[1], "avg_normalized_loss")?,
            running_jobs: num(&path, line, &f[2], "running_jobs")?,
            shares: GroupShare {
                high: num(&path, line, &f[3], "share_high")?,
                medium: num(&path, line, &f[4], "share_medium")?,
                low: num(&path, line, &f[5], "share_low")?,
            },
        });
    }

    let path = dir.join("jobs.csv");
    for (line, f) in rows(&path, JOBS_HEADER)? {
        if f.len() != 7 {
            return Err(parse_err(&path, line, "row"));
        }
        bundle.job_summaries.push(JobSummary {
            job_id: JobId(num(&path, line, &f[0], "job_id")?),
            arrival_s: num(&path, line, &f[1], "arrival_s")?,
            family: if f[2].is_empty() {
                None
            } else {
                Some(f[2].parse().map_err(|_| parse_err(&path, line, "family"))?)
            },
            time_to_90pct_s: opt_num(&path, line, &f[3], "time_to_90pct_s")?,
            time_to_95pct_s: opt_num(&path, line, &f[4], "time_to_95pct_s")?,
            completion_s: opt_num(&path, line, &f[5], "completion_s")?,
            total_core_seconds: num(&path, line, &f[6], "total_core_seconds")?,
        });
    }

    let path = dir.join("sched_latency.csv");
    for (line, f) in rows(&path, LATENCY_HEADER)? {
        if f.len() != 2 {
            return Err(parse_err(&path, line, "row"));
        }
        bundle.scheduler_latencies.push(LatencySample {
            epoch: num(&path, line, &f[0], "epoch")?,
            millis: num(&path, line, &f[1], "millis")?,
        });
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::Family;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(0.123456789), "0.123457");
        assert_eq!(format_sig6(1234567.0), "1234570");
        assert_eq!(format_sig6(2.0), "2");
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(-0.0), "0");
        assert_eq!(format_sig6(1.5e-7), "0.00000015");
        assert_eq!(format_sig6(99.99996), "100");
    }

    #[test]
    fn empty_bundle_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        export_csv(&MetricsBundle::default(), dir.path()).unwrap();
        for (name, header) in [
            ("timeseries.csv", TIMESERIES_HEADER),
            ("jobs.csv", JOBS_HEADER),
            ("sched_latency.csv", LATENCY_HEADER),
        ] {
            let text = fs::read_to_string(dir.path().join(name)).unwrap();
            assert_eq!(text, format!("{header}\n"));
        }
    }

    #[test]
    fn undefined_times_are_empty_fields() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = MetricsBundle {
            job_summaries: vec![JobSummary {
                job_id: JobId(3),
                arrival_s: 12.5,
                family: Some(Family::Exponential),
                time_to_90pct_s: Some(40.0),
                time_to_95pct_s: None,
                completion_s: None,
                total_core_seconds: 1280.0,
            }],
            ..MetricsBundle::default()
        };
        export_csv(&bundle, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("jobs.csv")).unwrap();
        assert_eq!(text.lines().nth(1), Some("3,12.5,exponential,40,,,1280"));
    }

    #[test]
    fn export_into_missing_parent_fails_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = export_csv(&MetricsBundle::default(), &blocker.join("out")).unwrap_err();
        assert!(err.to_string().contains("file"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rounded(x: f64) -> f64 {
            format!("{x:.5e}").parse().unwrap()
        }

        fn sample() -> impl Strategy<Value = TimeSample> {
            (0.0f64..1e5, 0.0f64..=1.0, 0usize..500, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0)
                .prop_map(|(t, l, n, h, m, lo)| TimeSample {
                    sim_time: t,
                    avg_normalized_loss: l,
                    running_jobs: n,
                    shares: GroupShare { high: h, medium: m, low: lo },
                })
        }

        fn summary() -> impl Strategy<Value = JobSummary> {
            (
                0u64..1000,
                0.0f64..1e4,
                prop::option::of(0.0f64..1e3),
                prop::option::of(0.0f64..1e3),
                prop::option::of(0.0f64..1e4),
                0.0f64..1e7,
                any::<bool>(),
            )
                .prop_map(|(id, a, t90, t95, c, cs, sub)| JobSummary {
                    job_id: JobId(id),
                    arrival_s: a,
                    family: Some(if sub { Family::Sublinear } else { Family::Exponential }),
                    time_to_90pct_s: t90,
                    time_to_95pct_s: t95,
                    completion_s: c,
                    total_core_seconds: cs,
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn round_trip_at_declared_precision(
                series in prop::collection::vec(sample(), 0..20),
                jobs in prop::collection::btree_map(0u64..1000, summary(), 0..20),
                lat in prop::collection::vec(0.0f64..1e4, 0..20),
            ) {
                let jobs: Vec<JobSummary> = jobs
                    .into_iter()
                    .map(|(id, mut s)| { s.job_id = JobId(id); s })
                    .collect();
                let bundle = MetricsBundle {
                    time_series: series,
                    job_summaries: jobs,
                    scheduler_latencies: lat
                        .iter()
                        .enumerate()
                        .map(|(i, &m)| LatencySample { epoch: i as u64, millis: m })
                        .collect(),
                };
                let dir = tempfile::tempdir().unwrap();
                export_csv(&bundle, dir.path()).unwrap();
                let back = read_csv(dir.path()).unwrap();

                prop_assert_eq!(back.time_series.len(), bundle.time_series.len());
                for (a, b) in bundle.time_series.iter().zip(&back.time_series) {
                    prop_assert_eq!(rounded(a.sim_time), b.sim_time);
                    prop_assert_eq!(rounded(a.avg_normalized_loss), b.avg_normalized_loss);
                    prop_assert_eq!(a.running_jobs, b.running_jobs);
                    prop_assert_eq!(rounded(a.shares.high), b.shares.high);
                    prop_assert_eq!(rounded(a.shares.low), b.shares.low);
                }
                for (a, b) in bundle.job_summaries.iter().zip(&back.job_summaries) {
                    prop_assert_eq!(a.job_id, b.job_id);
                    prop_assert_eq!(a.family, b.family);
                    prop_assert_eq!(a.time_to_95pct_s.map(rounded), b.time_to_95pct_s);
                    prop_assert_eq!(a.completion_s.map(rounded), b.completion_s);
                    prop_assert_eq!(rounded(a.total_core_seconds), b.total_core_seconds);
                }
                for (a, b) in bundle.scheduler_latencies.iter().zip(&back.scheduler_latencies) {
                    prop_assert_eq!(a.epoch, b.epoch);
                    prop_assert_eq!(rounded(a.millis), b.millis);
                }
            }
        }
    }
}
