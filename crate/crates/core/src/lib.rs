//! Quality-driven scheduling for iterative ML training jobs.
//!
//! The crate normalizes per-job loss progress, predicts future loss from
//! fitted convergence curves, allocates cluster cores greedily to the jobs
//! with the largest predicted quality gain, and evaluates that policy against
//! a work-conserving fair-share baseline in a deterministic epoch-based
//! simulator.

pub mod cli;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod predictor;
pub mod scheduler;
pub mod simulator;

pub use error::{Error, FitError, Result};
