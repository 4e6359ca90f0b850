use thiserror::Error;

/// Errors produced by the numeric core, the pipeline and the weights codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("softmax row {row} is fully masked")]
    DegenerateRow { row: usize },

    #[error("invalid count: requested {requested} of {available}")]
    InvalidCount { requested: usize, available: usize },

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("grid side {grid} is not divisible by factor {factor}")]
    InvalidFactor { grid: usize, factor: usize },

    #[error("invalid mode: {0}")]
    InvalidMode(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("weights parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::InvalidShape(msg.into())
}
