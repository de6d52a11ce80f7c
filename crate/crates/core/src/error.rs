use thiserror::Error;

/// Errors produced by the deblurring toolkit.
#[derive(Error, Debug)]
pub enum DeblurError {
    /// Sizes that violate the truncated-convolution sizing relations.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A size specification that makes the problem under-determined.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// A scalar parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Image has an unsupported channel count for the requested operation.
    #[error("unsupported channels: {0}")]
    UnsupportedChannels(String),

    /// A shift that would move nonzero content off its canvas.
    #[error("shift moves nonzero content out of support: {0}")]
    OutOfSupport(String),

    /// Generator architecture cannot be built for the requested size.
    #[error("architecture error: {0}")]
    Architecture(String),

    /// The optimization produced a non-finite objective and was aborted.
    #[error("run aborted at iteration {iter}: {reason}")]
    RunAborted { iter: usize, reason: String },

    /// A derived quantity was requested from a trace that does not carry it.
    #[error("unavailable: {0}")]
    Unavailable(String),

    /// Checkpoint archive malformed or of an unsupported version.
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Codec { path: String, message: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl DeblurError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DeblurError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DeblurError>;
