// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("dataset schema version {found} does not match supported version {expected}")]
    Schema { found: u64, expected: u64 },
    #[error("dataset line {line}: {msg}")]
    Dataset { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
