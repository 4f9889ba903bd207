use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline, from configuration loading to the
/// closed-loop stepper.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible design: {inequality} violated ({detail})")]
    Infeasible {
        inequality: &'static str,
        detail: String,
    },

    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("grid mismatch: expected {expected} nodes, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("CFL condition violated: courant number {courant} exceeds 1")]
    Cfl { courant: f64 },

    #[error("time step {dt:e} exceeds tau/10 = {limit:e}; use a grid of at least N = {suggested_grid}")]
    StepTooLarge {
        dt: f64,
        limit: f64,
        suggested_grid: usize,
    },

    #[error("numerical divergence at t = {t}: {what} is not finite")]
    Divergence { t: f64, what: &'static str },

    #[error("kernel cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error("malformed trace {path}: {reason}")]
    Trace { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidPlant(_)
            | Error::Config(_)
            | Error::Infeasible { .. }
            | Error::StepTooLarge { .. }
            | Error::Cfl { .. }
            | Error::Trace { .. } => 2,
            Error::Divergence { .. } | Error::NotConverged { .. } => 3,
            _ => 1,
        }
    }
}
