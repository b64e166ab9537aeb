// SPDX-License-Identifier: Apache-2.0

//! A small dense tensor engine: row-major matrices, a reverse-mode tape
//! with the operations a transformer needs, losses, Adam, and a checkpoint
//! container.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use optim::Adam;
pub use params::{accumulate, Binder, ParamStore};
pub use real::Real;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
