use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the binarization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("histogram is degenerate (constant image)")]
    DegenerateHistogram,

    #[error("class means are not distinct")]
    DegenerateMeans,

    #[error("class {0} has zero mass")]
    EmptyRegion(usize),

    #[error("class {0} missing from ground truth")]
    MissingClass(usize),

    #[error("value {value} outside the prox domain (-1, 1)")]
    DomainError { value: f64 },

    #[error("DRD undefined: ground truth has no non-uniform 8x8 block")]
    UndefinedDrd,

    #[error("pixel ({x}, {y}) not covered by any patch")]
    Uncovered { x: usize, y: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("i/o error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by the data rather than by the caller's usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
