use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("charset: unknown character {ch:?}")]
    UnknownChar { ch: char },

    #[error("text too long: {len} exceeds maximum {max}")]
    TextTooLong { len: usize, max: usize },

    #[error("{path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("synthesis acceptance rate {rate:.3} below minimum {min:.3} after {attempts} attempts")]
    LowAcceptance {
        rate: f64,
        min: f64,
        attempts: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
