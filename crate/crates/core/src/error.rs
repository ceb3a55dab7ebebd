use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is not on the unit sphere (norm {norm})")]
    InvalidPoint { norm: f64 },

    #[error("gamma field overflow: linear predictor {value} exceeds the clamp of {limit}")]
    ParameterOverflow { value: f64, limit: f64 },

    #[error("numerical singularity at index {index}: {detail}")]
    NumericalSingularity { index: usize, detail: String },

    #[error("invalid Matérn smoothness {0}; must be > 0")]
    InvalidSmoothness(f64),

    #[error("duplicate location at indices {first} and {second}")]
    DuplicateLocation { first: usize, second: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("transform error at row {row}: {detail}")]
    Transform { row: usize, detail: String },

    #[error("values have zero spread; cannot standardize")]
    DegenerateScale,

    #[error("could not place a test region after {attempts} attempts")]
    Placement { attempts: usize },

    #[error("simulation infeasible: covariance not factorizable with jitter up to {max_jitter}")]
    SimulationInfeasible { max_jitter: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::ParameterOverflow { .. }
            | Error::NumericalSingularity { .. }
            | Error::InvalidSmoothness(_)
            | Error::SimulationInfeasible { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
