use alloc::string::String;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("image too small: {width}x{height} (each side must be at least 3 pixels)")]
    ImageTooSmall { width: usize, height: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("scorer `{name}` returned {value}, outside [{min}, {max}]")]
    ScorerOutOfRange {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("scorer `{name}` failed: {reason}")]
    ScorerFailed { name: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("training diverged at step {step}: loss {loss} exceeds 1e6")]
    Diverged { step: usize, loss: f64 },

    #[error("non-finite sampler state at step {step} (t = {t})")]
    NonFiniteState { step: usize, t: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
