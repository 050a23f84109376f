//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! walks the record in reverse and accumulates adjoints. Parameters live in
//! [`ModelParams`] and are bound to a tape through a [`Session`].

mod adam;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::AdamW;
pub use params::{Init, ModelParams, ParamGrads, ParamGroup, ParamId, ParamTensor, Session};
pub use tape::{Backward, Ctx, Gradients, Tape, Var};
pub use tensor::Tensor;
