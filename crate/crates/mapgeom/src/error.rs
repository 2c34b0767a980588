//! Error type shared by every module in the crate.

use thiserror::Error;

/// All failure modes of the library.
///
/// Variants split into two families that the CLI maps onto distinct exit
/// codes: *validation* errors (malformed inputs, broken invariants, bad
/// configuration) and *numerical* errors (non-finite values produced during
/// computation). [`Error::is_numerical`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    /// A coordinate or parameter that must be finite is NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A polyline has fewer than the minimum two points.
    #[error("polyline needs at least 2 points, got {got}")]
    TooFewPoints { got: usize },

    /// Two objects that must agree on their point count do not.
    #[error("point count mismatch: {left} vs {right} ({context})")]
    PointCountMismatch {
        left: usize,
        right: usize,
        context: String,
    },

    /// A score, probability, or weight is outside its admissible range.
    #[error("{what} = {value} outside {range}")]
    OutOfRange {
        what: String,
        value: f64,
        range: String,
    },

    /// An index (token, instance, point, class label) is out of bounds.
    #[error("{what} index {index} out of bounds (len {len})")]
    IndexOutOfBounds {
        what: String,
        index: usize,
        len: usize,
    },

    /// A matrix or map has the wrong dimensions for the requested operation.
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    /// A configuration value is structurally invalid.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A required input is missing (e.g. a prediction without a score).
    #[error("missing input: {0}")]
    MissingInput(String),

    /// JSON input could not be parsed into the expected schema.
    #[error("malformed input: {0}")]
    Malformed(String),

    /// A computation produced a non-finite loss or gradient.
    #[error("numerical failure: {context}")]
    NumericalFailure { context: String },
}

impl Error {
    /// `true` for failures of the computation itself (non-finite losses or
    /// gradients), as opposed to rejected inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalFailure { .. })
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
