use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("boundary condition mismatch: operator uses {op}, field uses {field}")]
    BoundaryMismatch { op: String, field: String },

    #[error("unsupported Matérn smoothness nu = {0} (supported: 0.5, 1.5, 2.5)")]
    UnsupportedSmoothness(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} outside the allowed range {lo}..={hi}")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    #[error("index {0} is not on the diffusion schedule")]
    NotOnSchedule(usize),

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("state dimension {dim} exceeds the full-covariance UKF cap of {cap}")]
    StateTooLarge { dim: usize, cap: usize },

    #[error("simulation became unstable at step {step}")]
    Unstable { step: usize },

    #[error("CFL condition violated: courant number {0} > 1")]
    Cfl(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{0} already exists (pass --force to overwrite)")]
    AlreadyExists(PathBuf),

    #[error("missing artifact: {0}")]
    Missing(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
