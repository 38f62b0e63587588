use hdgcn_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HdError {
    #[error("topology: {0}")]
    Topology(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HdError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            HdError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = HdError> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> HdError {
    HdError::Config(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> HdError {
    HdError::Data(msg.into())
}
