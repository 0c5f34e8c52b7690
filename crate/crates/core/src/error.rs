use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid dimensions {0:?}")]
    InvalidDims([usize; 3]),

    #[error("voxel count overflows usize for dims {0:?}")]
    DimensionOverflow([usize; 3]),

    #[error("length mismatch: expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("imaginary residual {residual:e} exceeds tolerance {limit:e}")]
    ImaginaryResidual { residual: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("could not place atom {atom} after {retries} attempts")]
    PlacementExhausted { atom: usize, retries: usize },

    #[error("atom at ({x:.3}, {y:.3}, {z:.3}) is too close to the grid boundary")]
    BoundaryViolation { x: f64, y: f64, z: f64 },

    #[error("map has no positive values")]
    EmptyMap,

    #[error("pool of {pool} positions cannot supply a subset of {subset}")]
    PoolTooSmall { pool: usize, subset: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) | Error::Format { .. } | Error::Json(_) => ErrorKind::Io,
            Error::Diverged { .. } | Error::ImaginaryResidual { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Config,
        }
    }
}
