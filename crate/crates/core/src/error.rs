use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0} contains no points")]
    EmptyCloud(PathBuf),

    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },

    #[error("point cloud must contain at least one point")]
    NoPoints,

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("neighbor count k = {k} must satisfy 1 <= k < m = {m}")]
    InvalidK { k: usize, m: usize },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        reason: &'static str,
    },

    #[error("vertex {0} has zero degree")]
    ZeroDegree(usize),

    #[error("normal {0} has zero length and cannot be normalized")]
    ZeroNormal(usize),

    #[error("normal {index} is not unit length (norm {norm})")]
    NotUnit { index: usize, norm: f64 },

    #[error("unknown weighting strategy '{0}' (expected none, dot, dist or dot-dist)")]
    UnknownWeighting(String),

    #[error("non-finite loss at iteration {iter}; the step size alpha = {alpha} is likely too large")]
    Diverged { iter: usize, alpha: f64 },

    #[error("points_per_plane = {0} is not a perfect square >= 4")]
    NotSquare(usize),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, value: impl ToString, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value: value.to_string(),
            reason,
        }
    }
}
