use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Entropy(#[from] illm_entropy::EntropyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("container was written by model {found:016x}, loaded model is {expected:016x}")]
    ModelMismatch { expected: u64, found: u64 },
    #[error("training: {0}")]
    Training(String),
    #[error("evaluation: {0}")]
    Eval(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::CoreError::Shape(format!($($arg)*)) };
}
pub(crate) use shape_err;
