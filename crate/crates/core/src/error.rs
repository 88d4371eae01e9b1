use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("latitude {lat} rad is within {margin} rad of a pole")]
    PolarSingularity { lat: f64, margin: f64 },

    #[error("matrix is not near orthogonal (|C^T C - I| = {deviation:e})")]
    NotNearOrthogonal { deviation: f64 },

    #[error("IMU record is empty")]
    EmptyRecord,

    #[error("Euler platform error angle x = {alpha_x} rad makes C_omega singular")]
    GimbalSingularity { alpha_x: f64 },

    #[error("covariance is not positive semidefinite (Cholesky failed after jitter)")]
    CholeskyFailure,

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("time alignment: {0}")]
    TimeAlignment(String),

    #[error("inconsistent scenario: {0}")]
    InconsistentScenario(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {msg}")]
    Config { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    Ingest {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("structural mismatch: {0}")]
    Structure(String),
}

/// Broad failure classes, each mapped to a distinct process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Ingestion,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Ingestion => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::InvalidInput(_) | Error::InconsistentScenario(_) => {
                ErrorClass::Config
            }
            Error::Ingest { .. }
            | Error::Io { .. }
            | Error::EmptyRecord
            | Error::TimeAlignment(_)
            | Error::Structure(_) => ErrorClass::Ingestion,
            Error::PolarSingularity { .. }
            | Error::NotNearOrthogonal { .. }
            | Error::GimbalSingularity { .. }
            | Error::CholeskyFailure
            | Error::SingularInnovation => ErrorClass::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
