use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A CTC target cannot be aligned to the available number of frames.
    #[error("infeasible target for sample {index}: label of length {label_len} needs {required} frames, only {frames} available")]
    InfeasibleTarget {
        index: usize,
        label_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("batchnorm running statistics are uninitialized; run a train-mode pass or load a checkpoint")]
    UninitializedStatistics,

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure_shape {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::Shape(format!($($arg)*)));
        }
    };
}

pub(crate) use ensure_shape;
