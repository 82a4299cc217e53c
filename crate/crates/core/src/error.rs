use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum MmcError {
    /// Operand shapes do not conform for the named operation.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A scalar parameter is out of its allowed range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Non-finite values where finite arithmetic is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API contract was violated (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Inconsistent configuration (variant/model/dataset mismatch, unknown keys).
    #[error("configuration error: {0}")]
    Config(String),

    /// Paired-modality inputs do not align (resolution or scale mismatch).
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Malformed on-disk data (manifest, checkpoint, image record).
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MmcError>;
