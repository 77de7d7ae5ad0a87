//! Reverse-mode automatic differentiation over dense f64 tensors.

mod params;
mod tape;
mod tensor;

pub use params::{finite_difference_gradient, AdamConfig, Bound, ParamEntry, ParamStore, CKPT_MAGIC, CKPT_VERSION};
pub use tape::{broadcast_shape, CustomBackward, Gradients, Tape, LAYER_NORM_EPS};
pub use tensor::{NodeId, Tensor};
