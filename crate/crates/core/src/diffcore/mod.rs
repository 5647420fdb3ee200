//! Dense-array math with reverse-mode differentiation and Adam.
//!
//! Arrays are row-major and carry their shape. Broadcasting is limited to a
//! trailing-shape operand applied to every row of a batch.

mod adam;
mod array;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::{gemm, DenseArray, Real};
pub use tape::{Gradients, Primitive, Tape, Var};
