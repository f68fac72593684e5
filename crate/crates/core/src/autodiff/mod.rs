//! Reverse-mode differentiation over dense tensors and the Adam optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{Binding, ParamId, ParamStore};
pub use tape::{sigmoid, soft_threshold_scalar, Tape, Var, WeightedMask};
pub use tensor::Tensor;
