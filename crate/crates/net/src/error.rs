use thiserror::Error;

use crate::train::TrainLog;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Core(#[from] lrsci_core::Error),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    Diverged(String),
    #[error("loss became non-finite at step {step}")]
    TrainingDiverged { step: usize, log: Box<TrainLog> },
}

pub type Result<T> = std::result::Result<T, NetError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(NetError::InvalidArgument(msg.into()))
}
