//! Dense `f64` tensors with a reverse-mode tape.
//!
//! Values are recorded on a [`Tape`] as operations run; [`Tape::backward`]
//! replays the record in reverse to fill in gradients for every tracked leaf.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_with, GradReport, DEFAULT_EPS, REL_ERR_FLOOR};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamStore, StoredTensor};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("softmax row {row} has every entry masked")]
    AllMasked { row: usize },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },
    #[error("backward already ran on this tape; reset it first")]
    BackwardTwice,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
