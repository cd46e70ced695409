//! Batch samplers, learning-rate schedules and the SGD training loop with
//! pluggable minority augmentation.

mod dataset;
mod method;
mod sampler;
mod schedule;
mod train;

#[cfg(test)]
mod tests;

pub use dataset::Dataset;
pub use method::{Method, MethodSpec};
pub use sampler::{sample_batch, SamplerMode, SamplerSpec};
pub use schedule::TrainSchedule;
pub use train::{finetune_from_base, train, History, HistoryRow, HISTORY_EVERY};
