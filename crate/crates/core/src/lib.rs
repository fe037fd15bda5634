// `!(x > 0.0)` style checks are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod scorer;
pub mod structural;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Adam, AdamConfig, Gradients, Tape, Tensor, Var};
