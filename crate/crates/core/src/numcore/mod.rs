//! Dense `f64` tensors with a reverse-mode tape.
//!
//! Only the handful of ops the forecasting models need are provided. The
//! [`gradcheck`] submodule holds a central-difference oracle used to check
//! the analytic gradients.

pub mod gradcheck;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{op}: unexpected input shape {shape:?}")]
    UnexpectedShape { op: &'static str, shape: Vec<usize> },
    #[error("rows have different lengths")]
    Ragged,
    #[error("invalid axes {axes:?} for shape {shape:?}")]
    InvalidAxes { axes: Vec<usize>, shape: Vec<usize> },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}
