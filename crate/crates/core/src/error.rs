use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("eigen iteration did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    ConvergenceFailure { sweeps: usize, residual: f64 },

    #[error("matrix function domain error: eigenvalue {value:e} is not positive")]
    Domain { value: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotSpd { min_eigenvalue: f64 },

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("ill-conditioned Koopman basis (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("degenerate feature vector (norm {norm:e})")]
    DegenerateFeature { norm: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("graph cycle: node {node} references parent {parent}")]
    GraphCycle { node: usize, parent: usize },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("gradient check failed for {0}")]
    GradientCheck(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 1 runtime failure, 2 usage or IO, 3 validation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Config { .. } | Error::InvalidArgument(_) => 2,
            Error::GradientCheck(_) => 3,
            _ => 1,
        }
    }
}
