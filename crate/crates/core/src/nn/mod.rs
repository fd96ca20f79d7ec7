//! Minimal reverse-mode differentiation over (time x channels) tensors with
//! the layer set the codec needs.

mod adam;
pub(crate) mod conv;
mod layers;
mod narrow;
mod scalar;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{Bound, ConvLayer, Param, ParamId, ParamSet, LEAKY_SLOPE};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;


#[cfg(test)]
mod gradcheck_tests;
