//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The engine is define-by-run: forward computations are recorded on a
//! [`Tape`] and replayed in reverse to accumulate vector-Jacobian products.
//! Every primitive also exists as a pure function (no recording), which is
//! what evaluation-only code paths use.

mod check;
mod ops;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_sampled};
pub use ops::{mm_nn as matmul_raw, Prim};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {prim}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        prim: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to {prim}: {msg}")]
    InvalidArg { prim: &'static str, msg: String },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable #{0} does not belong to this tape")]
    NotOnTape(usize),
    #[error("non-finite value while evaluating {context}")]
    NonFinite { context: String },
}
