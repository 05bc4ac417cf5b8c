//! Minimal reverse-mode automatic differentiation: shaped tensors, a
//! recorded operation tape, and finite-difference verification.

mod check;
mod tape;
mod tensor;

pub use check::grad_check;
pub use tape::{ElemKind, Gradients, NodeId, Tape};
pub use tensor::{Element, Tensor};

pub(crate) use tape::Op;
