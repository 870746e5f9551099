//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Picard iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    PicardNonConvergence { iterations: usize, residual: f64 },

    #[error("negative temperature at cell {cell} (T = {value:.3e})")]
    NegativeTemperature { cell: usize, value: f64 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("schema version mismatch: found {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("weak form error: {0}")]
    WeakForm(String),

    #[error("QP did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    QpNonConvergence { iterations: usize, residual: f64 },

    #[error("QP infeasible: {0}")]
    QpInfeasible(String),

    #[error("regression error: {0}")]
    Regression(String),

    #[error("sign inconsistency across ensemble for terms: {0}")]
    SignInconsistency(String),

    #[error("closure blow-up: {variable} < 0 first at cell {cell}, t = {time:.6e} s")]
    ClosureBlowUp {
        variable: &'static str,
        cell: usize,
        time: f64,
    },

    #[error("time step underflow at t = {time:.6e} s (dt = {dt:.3e})")]
    StepUnderflow { time: f64, dt: f64 },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// CLI exit code class: 2 for validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::Domain(_)
            | Error::Dataset(_)
            | Error::SchemaVersion { .. }
            | Error::Config(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
