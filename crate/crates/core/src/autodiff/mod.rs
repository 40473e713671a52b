//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations as they execute; [`Graph::backward`] walks
//! the tape once in reverse and returns gradients for every leaf. There is no
//! broadcasting beyond the explicit scalar and per-channel ops.

mod checkpoint;
mod graph;
mod kernels;
mod tensor;

use thiserror::Error;

pub use checkpoint::{read_tensors, write_tensors, CHECKPOINT_MAGIC};
pub use graph::{
    masked_softmax, sigmoid, softmax_score_grad, BackwardRule, Gradients, Graph, Padding, Var,
};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: unsupported rank for shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("spatial dimensions of {shape:?} must be even")]
    OddDimension { shape: Vec<usize> },
    #[error("selection mask is empty")]
    EmptyMask,
    #[error("selected index lies outside the mask")]
    SelectionOutsideMask,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
