// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("aig-core: {0}")]
    Core(#[from] gatelab_core::Error),
    #[error("tensor: {0}")]
    Tensor(#[from] gatelab_tensor::Error),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("training: loss component {component} is {value}")]
    NonFinite { component: String, value: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
