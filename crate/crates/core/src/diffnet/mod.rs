//! Small conv classifier with analytic parameter and input gradients.
//!
//! The same [`Classifier`] type serves as the teacher that guides generation
//! and as the student being trained.

mod arch;
pub mod checkpoint;
mod classifier;
pub mod gradcheck;
mod loss;

pub use arch::ArchSpec;
pub use classifier::{Classifier, Gradients};
pub use loss::{argmax, cross_entropy, cross_entropy_row, log_softmax_at, softmax, ScalarLoss, Target};
