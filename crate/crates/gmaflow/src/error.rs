use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum FlowError {
    /// Dimensions of two operands do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity was found where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A reduction was requested over a pixel set that contains no pixels.
    #[error("empty region: {0}")]
    EmptyRegion(String),

    /// A configuration or argument value is out of its legal range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Malformed binary file contents (bad magic, truncation, bad sizes).
    #[error("malformed file: {0}")]
    Format(String),

    /// Failed to parse a structured text input (scene spec, config).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;

impl FlowError {
    pub fn shape(msg: impl Into<String>) -> Self {
        FlowError::ShapeMismatch(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        FlowError::InvalidParameter(msg.into())
    }
}
