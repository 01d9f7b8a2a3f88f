use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the labeling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("backward called before any forward op was recorded for this seed")]
    BackwardBeforeForward,

    #[error("backward seed must be a scalar, got shape {0:?}")]
    NonScalarSeed(Vec<usize>),

    #[error("backward already ran on this graph; call reset_grads() first")]
    BackwardAlreadyRun,

    #[error("non-finite gradient in parameter `{name}` (index {index}, value {value})")]
    NonFiniteGradient {
        name: String,
        index: usize,
        value: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("disc {disc} annotation ({row}, {col}) lies outside a {rows}x{cols} image")]
    AnnotationOutOfBounds {
        disc: usize,
        row: f64,
        col: f64,
        rows: usize,
        cols: usize,
    },

    #[error("cannot normalize skeleton points: {0}")]
    Normalization(String),

    #[error("disc {0} is visible in none of the training cases")]
    DiscNeverVisible(usize),

    #[error("search space of {combinations} combinations exceeds the cap of {cap}; shrink the instance")]
    SearchCapExceeded { combinations: u128, cap: u128 },

    #[error("invalid NDAT data: {0}")]
    Ndat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs (bad paths, bad
    /// configs, malformed files) rather than internal failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Json { .. }
                | Error::Config(_)
                | Error::Ndat(_)
                | Error::AnnotationOutOfBounds { .. }
                | Error::DiscNeverVisible(_)
                | Error::Normalization(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
