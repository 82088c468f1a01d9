use std::path::PathBuf;

use btn_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, BtnError>;

#[derive(Debug, Error)]
pub enum BtnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// Configuration values that cannot produce a consistent model or run.
    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    /// The loss became NaN or infinite; the step was not applied.
    #[error("non-finite loss {loss} at {context}")]
    NonFiniteLoss { loss: f64, context: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BtnError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        BtnError::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        BtnError::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BtnError::Io {
            path: path.into(),
            source,
        }
    }
}
