//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The op set is deliberately closed: matmul, add (plus row bias-add), sub,
//! mul, scale, concat, slice, row gather, relu, sigmoid, tanh, exp, ln, sums
//! and means over an axis, softmax over an axis, layer norm, row-wise cosine
//! similarity, elementwise max and clamp. No other broadcasting exists.

mod gradcheck;
mod graph;
mod params;
mod tensor;

use thiserror::Error;

pub use gradcheck::{gradient_check, GradCheckReport, GradSample, FD_STEP, GRAD_FLOOR};
pub use graph::{Axis, Gradients, Graph, Var, COSINE_EPS, LAYER_NORM_EPS};
pub use params::{Initializer, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {shape:?}: every dimension must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("slice [{start}, {start}+{len}) out of range for shape {shape:?}")]
    Slice {
        shape: Vec<usize>,
        start: usize,
        len: usize,
    },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("duplicate parameter path `{path}`")]
    DuplicateParam { path: String },
    #[error("graph has no parameter store")]
    NoParamStore,
    #[error("non-finite value in parameter `{path}`")]
    NonFinite { path: String },
}
