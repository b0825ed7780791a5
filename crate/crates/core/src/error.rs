use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: line {line}, column {column}: cannot parse {cell:?} as a real number")]
    BadCell {
        path: PathBuf,
        line: usize,
        column: usize,
        cell: String,
    },

    #[error("{path}: line {line}, column {column}: non-finite value")]
    NonFiniteCell {
        path: PathBuf,
        line: usize,
        column: usize,
    },

    #[error("{0}: file contains no points")]
    EmptyFile(PathBuf),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate sketch: requested {requested} columns but the sketched basis only has rank {rank}")]
    DegenerateSketch { requested: usize, rank: usize },

    #[error("no radius up to {c_max} x h0 gives every query point {nu} neighbours")]
    UnreachableSupport { nu: usize, c_max: f64 },

    #[error("coincident points {a} and {b} (distance {distance:e})")]
    CoincidentPoints { a: usize, b: usize, distance: f64 },

    #[error("distance {0:e} is below the coincidence guard")]
    CoincidentDistance(f64),

    #[error("non-finite gradient at point {point} in iteration {iter}")]
    NonFiniteGradient { iter: usize, point: usize },

    #[error("solver aborted at iteration {iter}: {source}")]
    Aborted {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical procedure itself, as opposed to
    /// bad input or the filesystem.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::CoincidentPoints { .. }
            | Error::CoincidentDistance(_)
            | Error::NonFiniteGradient { .. }
            | Error::DegenerateSketch { .. }
            | Error::UnreachableSupport { .. }
            | Error::Degenerate(_) => true,
            Error::Aborted { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
