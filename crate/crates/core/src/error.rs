use std::path::PathBuf;

use thiserror::Error;

use crate::loss::JobId;

/// Reasons a convergence-curve fit can be rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("insufficient history: have {have} records, need {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("degenerate history: observed loss is constant")]
    DegenerateHistory,
    #[error("fit infeasible: {0}")]
    Infeasible(&'static str),
    #[error("no model: neither convergence family could be fitted")]
    NoModel,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("iteration {got} does not follow last recorded iteration {last}")]
    NonMonotoneIteration { last: u64, got: u64 },
    #[error("record time {got} precedes last recorded time {last}")]
    NonMonotoneTime { last: f64, got: f64 },
    #[error("no loss record at iteration {0}")]
    MissingRecord(u64),
    #[error("job has no loss records")]
    EmptyHistory,
    #[error("zero quality range: initial loss {initial} does not exceed asymptote {asymptote}")]
    ZeroQualityRange { initial: f64, asymptote: f64 },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("allocation plan references unknown job {0}")]
    UnknownJob(JobId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trace line {line}: {message}")]
    Trace { line: u64, message: String },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
