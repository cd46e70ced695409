//! Few-shot forgery detection laboratory built around guided adversarial
//! interpolation (GAI).
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: dense `f64` tensors, seeded RNG streams and the binary
//!   tensor format.
//! - [`diffnet`]: a small conv classifier with analytic parameter and input
//!   gradients, used both as teacher and student.
//! - [`gai`]: the interpolation engine, its perturbation variant and the
//!   fixed-ratio degenerations.
//! - [`trainkit`]: samplers, learning-rate schedules and the training loop.
//! - [`benchkit`]: synthetic forgery families, coverage analysis, benchmark
//!   assembly and the four evaluation metrics.
//! - [`experiment`]: configuration files and the commands behind the CLI.

pub mod benchkit;
pub mod diffnet;
pub mod error;
pub mod experiment;
pub mod gai;
pub mod numcore;
mod sample;
pub mod trainkit;

pub use error::{Error, Result};
pub use sample::LabeledSample;
