// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found} is not {expected}")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, left: &[usize], right: &[usize]) -> Result<T> {
    Err(Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    })
}
