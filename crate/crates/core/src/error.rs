use std::path::PathBuf;

use thiserror::Error;

use crate::solver::EquilibriumSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integration diverged at t = {time}: {detail}")]
    IntegrationDiverged { time: f64, detail: String },

    #[error("quadratic coefficient {a1:e} is below the convexity threshold")]
    DegenerateQuadratic { a1: f64 },

    #[error("forward-backward sweep did not converge after {} iterations (best residual {:e})", .0.iterations_used, .0.final_residual)]
    NotConverged(Box<NotConverged>),

    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("time step too large: dt * max exit rate = {product:.4} (must be < 0.1)")]
    StepTooLarge { product: f64 },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("calibration failed: worst per-class error {worst_error:.4} (nu = {nu:.6})")]
    CalibrationFailed { nu: f64, worst_error: f64, errors: Vec<f64> },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Payload of a non-converged solve: the best iterate found plus the full
/// residual history.
#[derive(Debug)]
pub struct NotConverged {
    pub best: EquilibriumSolution,
    pub residual_history: Vec<f64>,
}

impl std::ops::Deref for NotConverged {
    type Target = EquilibriumSolution;

    fn deref(&self) -> &EquilibriumSolution {
        &self.best
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
