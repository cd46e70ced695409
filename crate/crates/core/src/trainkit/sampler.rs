use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{ensure, Result};
use crate::numcore::SeededRng;
use crate::LabeledSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Every sample equally likely.
    InstanceBalanced,
    /// Every class equally likely, then uniform within the class.
    ClassBalanced,
}

/// How training batches are drawn.
///
/// `duplication` only affects instance-balanced sampling: the `minority`
/// class is weighted as if each of its samples appeared `duplication` times.
/// With the factor from [`SamplerSpec::balancing_duplication`] this
/// approximates class-balanced sampling by oversampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub mode: SamplerMode,
    pub duplication: usize,
    pub minority: Option<usize>,
}

impl SamplerSpec {
    pub fn instance_balanced() -> Self {
        Self {
            mode: SamplerMode::InstanceBalanced,
            duplication: 1,
            minority: None,
        }
    }

    pub fn class_balanced() -> Self {
        Self {
            mode: SamplerMode::ClassBalanced,
            duplication: 1,
            minority: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.duplication >= 1, || "duplication factor must be >= 1".into())
    }

    /// Duplication that brings `minority` to the mean size of the other
    /// nonempty classes.
    pub fn balancing_duplication(dataset: &Dataset, minority: usize) -> usize {
        let counts = dataset.class_counts();
        let n_min = counts.get(minority).copied().unwrap_or(0);
        let others: Vec<usize> = counts
            .iter()
            .enumerate()
            .filter(|&(c, &n)| c != minority && n > 0)
            .map(|(_, &n)| n)
            .collect();
        if n_min == 0 || others.is_empty() {
            return 1;
        }
        let mean = others.iter().sum::<usize>() as f64 / others.len() as f64;
        ((mean / n_min as f64).round() as usize).max(1)
    }

    /// Positions into `dataset` of a batch of `batch_size` draws.
    pub fn sample_positions(&self, dataset: &Dataset, rng: &mut SeededRng, batch_size: usize) -> Result<Vec<usize>> {
        self.validate()?;
        ensure(!dataset.is_empty(), || "cannot sample from an empty dataset".into())?;
        match self.mode {
            SamplerMode::ClassBalanced => {
                let counts = dataset.class_counts();
                let empty: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] == 0).collect();
                ensure(empty.is_empty(), || {
                    format!("class-balanced sampling needs every class populated, empty: {empty:?}")
                })?;
                Ok((0..batch_size)
                    .map(|_| {
                        let c = rng.below(dataset.classes());
                        let pos = dataset.class_positions(c);
                        pos[rng.below(pos.len())]
                    })
                    .collect())
            }
            SamplerMode::InstanceBalanced => {
                let (extra_class, extra) = match self.minority {
                    Some(m) if m < dataset.classes() && self.duplication > 1 => {
                        (m, dataset.class_positions(m).len() * (self.duplication - 1))
                    }
                    _ => (0, 0),
                };
                let total = dataset.len() + extra;
                Ok((0..batch_size)
                    .map(|_| {
                        let k = rng.below(total);
                        if k < dataset.len() {
                            k
                        } else {
                            let pos = dataset.class_positions(extra_class);
                            pos[(k - dataset.len()) % pos.len()]
                        }
                    })
                    .collect())
            }
        }
    }
}

/// Draws a batch of samples (with replacement).
pub fn sample_batch(
    dataset: &Dataset,
    spec: &SamplerSpec,
    rng: &mut SeededRng,
    batch_size: usize,
) -> Result<Vec<LabeledSample>> {
    Ok(spec
        .sample_positions(dataset, rng, batch_size)?
        .into_iter()
        .map(|p| dataset.get(p).clone())
        .collect())
}
