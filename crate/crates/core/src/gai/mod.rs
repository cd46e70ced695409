//! Guided adversarial interpolation and its degenerate variants.
//!
//! A minority duplicate is replaced by `x* = alpha * x_major + (1 - alpha) *
//! x_minor`, where the per-pixel coefficients `alpha` are optimized by
//! normalized gradient descent on
//!
//! ```text
//! L(x*) = CE(g(x*), minority) + lambda * f(x*)[source] + beta * TV(alpha)
//! ```
//!
//! with teacher `g` and student `f`, then clamped to `[0, 1]` after every
//! step. Samples the teacher does not place in the minority class with
//! confidence at least `tau` are rejected.

mod config;
mod generate;
mod objective;
#[cfg(test)]
mod tests;

pub use config::{GaiConfig, RestrainMode};
pub use generate::{
    augment_minority, fixed_interp_generate, gai_generate, gai_generate_traced, gai_minus_generate,
    gai_minus_traced, initial_alpha, replace_batch, AugmentedSample, GenerationOutcome, Guides,
    InterpState, Quintuple, ReplaceStats, StepRecord, Variant, MIN_GRAD_NORM,
};
pub use objective::{
    interpolate, objective, objective_grad_alpha, objective_terms, smoothness_grad, smoothness_loss,
    ObjectiveTerms,
};
