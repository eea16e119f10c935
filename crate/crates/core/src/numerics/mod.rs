//! Dense `f64` tensors, a reverse-mode tape and the Adam optimizer.
//!
//! Every trainable computation in the model is recorded on a [`Tape`] as a
//! sequence of primitives. [`Tape::backward`] walks the record in reverse and
//! returns a [`Gradients`] table that [`ParameterStore::accumulate`] folds
//! into the parameters' gradient slots.

mod adam;
mod gemm;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{glorot_uniform, ParamId, Parameter, ParameterStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
