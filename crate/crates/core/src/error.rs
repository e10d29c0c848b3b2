//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by latent-control operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// An index fell outside its valid range.
    #[error("index {index} out of range for {context} of size {size}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        size: usize,
    },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A requested count exceeded what is available.
    #[error("count {requested} out of range for {context} of size {available}")]
    CountOutOfRange {
        context: &'static str,
        requested: usize,
        available: usize,
    },

    /// A class had no training examples.
    #[error("attribute {attr}: class {class} has no examples")]
    ClassCoverage { attr: String, class: usize },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    /// A serialized blob failed to parse.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// An attribute id was not found.
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),

    /// A step direction vanished after masking.
    #[error("vanishing gradient: direction norm {norm:e} below threshold")]
    VanishingGradient { norm: f64 },

    /// Required data is missing.
    #[error("missing data: {0}")]
    MissingData(String),

    /// A normalizer has zero spread and cannot be divided by.
    #[error("degenerate normalizer: attribute {attr} has zero logit deviation")]
    DegenerateNormalizer { attr: String },

    /// A parameter or configuration value is invalid.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
