//! Tensors, seeded randomness and the binary tensor format.

pub mod io;
mod rng;
mod tensor;

pub use rng::{bernoulli, derive_seed, mix64, SeededRng};
pub use tensor::{clamp01, elementwise, l2_norm, ElementwiseOp, Tensor};
