use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum LrnrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular or ill-conditioned system (condition estimate {cond:e})")]
    Singular { cond: f64 },

    #[error("non-finite value in layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: String },

    #[error("degenerate basis: interpolation residual vanished at step {step}")]
    DegenerateBasis { step: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("truncated file: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LrnrError>;

impl LrnrError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LrnrError::InvalidInput(msg.into())
    }
}
