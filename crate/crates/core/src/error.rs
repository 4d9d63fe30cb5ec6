//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// The ambient point lies in the singular set of the closest-point
    /// projection (no unique nearest point). Callers that drew the point
    /// from noise should resample.
    #[error("singular projection: {0}")]
    SingularProjection(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported manifold for this operation: {0}")]
    UnsupportedManifold(String),

    /// The random-walk sampler hit the singular set more than the retry
    /// budget allows (practically unreachable with Gaussian steps).
    #[error("noise resampling budget exceeded after {0} attempts")]
    ResampleExceeded(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// All importance weights underflowed; the log-likelihood estimate is -inf.
    #[error("all importance weights underflowed")]
    DegenerateWeights,

    #[error("bad magic number in {path}: expected {expected:#010x}, got {got:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        got: u32,
    },

    #[error("truncated file {path}: needed {needed} bytes, had {had}")]
    TruncatedFile {
        path: String,
        needed: usize,
        had: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("grid size {grid} does not divide picture size {picture}")]
    BadGrid { grid: usize, picture: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format error: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
