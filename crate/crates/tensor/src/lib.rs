//! Minimal dense-tensor math with reverse-mode automatic differentiation.
//!
//! Values are row-major `f64` matrices ([`Tensor`]). A [`Tape`] records every
//! operation of one forward pass; [`Tape::backward`] then walks the record in
//! reverse and accumulates exact gradients for every parameter leaf.
//!
//! The tape is rebuilt for every example, so graphs may have a different
//! shape each time (scenes with different object counts, histories of
//! different lengths).
//!
//! ```
//! use tooluse_tensor::{ParamId, Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(ParamId(0), &Tensor::row(vec![3.0]));
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(tape.value(loss).data()[0], 9.0);
//! assert_eq!(grads.get(ParamId(0)).unwrap().data()[0], 6.0);
//! ```

mod check;
mod optim;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    BadBuffer { shape: Vec<usize>, len: usize },
    #[error("{op} needs at least one input")]
    Empty { op: &'static str },
    #[error("backward root must be a 1x1 scalar, got {0:?}")]
    NonScalarRoot(Vec<usize>),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
