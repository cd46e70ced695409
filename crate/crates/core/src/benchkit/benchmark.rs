use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::coverage::CoverageMatrix;
use super::family::Splits;
use crate::error::{ensure, Result};
use crate::numcore::SeededRng;
use crate::trainkit::Dataset;
use crate::LabeledSample;

/// Which families play majority and minority, and how much data each gets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    /// Family ids of the majority forgery classes, labeled `1..=n` in order.
    pub majority: Vec<usize>,
    /// Family id of the minority class, labeled `n + 1`.
    pub minority: usize,
    /// Minority training samples (`N`).
    pub shots: usize,
    /// Rendered samples per majority family and split ratio between train
    /// and test.
    pub samples_per_family: usize,
    pub split_ratio: f64,
    /// Real training images; `None` balances them against all majority fakes.
    pub real_count: Option<usize>,
    pub seed: u64,
    /// Coverage threshold (percent) the minority must stay below.
    pub threshold: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            majority: vec![2, 4],
            minority: 0,
            shots: 50,
            samples_per_family: 10_600,
            split_ratio: 0.95,
            real_count: None,
            seed: 7,
            threshold: 70.0,
        }
    }
}

impl BenchmarkSpec {
    pub fn classes(&self) -> usize {
        self.majority.len() + 2
    }

    pub fn minority_label(&self) -> usize {
        self.majority.len() + 1
    }

    pub fn train_per_family(&self) -> usize {
        (self.samples_per_family as f64 * self.split_ratio).round() as usize
    }

    pub fn test_per_family(&self) -> usize {
        self.samples_per_family - self.train_per_family()
    }

    pub fn real_train_count(&self) -> usize {
        self.real_count.unwrap_or(self.majority.len() * self.train_per_family())
    }

    /// Checks the structural invariants and, given a coverage matrix, that
    /// no majority family covers the minority.
    pub fn validate(&self, coverage: Option<&CoverageMatrix>) -> Result<()> {
        ensure(!self.majority.is_empty(), || "benchmark needs at least one majority family".into())?;
        let uniq: HashSet<_> = self.majority.iter().collect();
        ensure(uniq.len() == self.majority.len(), || "majority families repeat".into())?;
        ensure(!self.majority.contains(&self.minority), || {
            format!("minority family {} is also a majority family", self.minority)
        })?;
        ensure(self.split_ratio > 0.0 && self.split_ratio < 1.0, || {
            format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)
        })?;
        ensure(self.shots >= 1, || "shots must be >= 1".into())?;
        let smallest = self.train_per_family();
        ensure(self.shots * 100 <= smallest, || {
            format!(
                "{} shots exceed 1% of the smallest majority class ({smallest} samples)",
                self.shots
            )
        })?;
        ensure(self.test_per_family() >= 1, || "test split is empty".into())?;
        ensure(self.threshold > 0.0 && self.threshold < 100.0, || "threshold must lie in (0, 100)".into())?;
        if let Some(cov) = coverage {
            for &i in self.majority.iter().chain([&self.minority]) {
                ensure(i < cov.len(), || format!("family {i} missing from the coverage matrix"))?;
            }
            let (worst, acc) = self
                .majority
                .iter()
                .map(|&i| (i, cov.acc[i][self.minority]))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            ensure(acc < self.threshold, || {
                format!(
                    "minority family {} is covered by majority family {worst} ({acc:.1}% >= {}%)",
                    self.minority, self.threshold
                )
            })?;
        }
        Ok(())
    }
}

/// Train and test sets of an assembled benchmark.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: Dataset,
    pub test: Dataset,
    pub minority_label: usize,
}

impl Benchmark {
    /// The same benchmark without the minority shots.
    pub fn unseen_train(&self) -> Dataset {
        self.train.without_class(self.minority_label)
    }

    pub fn classes(&self) -> usize {
        self.train.classes()
    }
}

fn relabel(samples: &[LabeledSample], label: usize) -> impl Iterator<Item = LabeledSample> + '_ {
    samples.iter().map(move |s| LabeledSample::new(s.image.clone(), label, s.id))
}

/// Builds the labeled train and test sets.
///
/// `majority` and `minority` are the rendered splits of the spec's families.
/// The minority shots are the first `N` of a seeded permutation, so smaller
/// shot counts are subsets of larger ones.
pub fn assemble_benchmark(
    spec: &BenchmarkSpec,
    coverage: Option<&CoverageMatrix>,
    real: &Splits,
    majority: &[&Splits],
    minority: &Splits,
) -> Result<Benchmark> {
    spec.validate(coverage)?;
    ensure(majority.len() == spec.majority.len(), || {
        format!("{} majority families given, spec lists {}", majority.len(), spec.majority.len())
    })?;
    ensure(minority.train.len() >= spec.shots, || {
        format!(
            "only {} minority training samples for {} shots",
            minority.train.len(),
            spec.shots
        )
    })?;
    let real_n = spec.real_train_count();
    ensure(real.train.len() >= real_n, || {
        format!("only {} real training samples, need {real_n}", real.train.len())
    })?;
    let minority_label = spec.minority_label();
    let mut order: Vec<usize> = (0..minority.train.len()).collect();
    let mut rng = SeededRng::new(spec.seed);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let mut shots: Vec<usize> = order[..spec.shots].to_vec();
    shots.sort_unstable();

    let mut train: Vec<LabeledSample> = relabel(&real.train[..real_n], 0).collect();
    let mut test: Vec<LabeledSample> = relabel(&real.test, 0).collect();
    for (k, m) in majority.iter().enumerate() {
        train.extend(relabel(&m.train, k + 1));
        test.extend(relabel(&m.test, k + 1));
    }
    train.extend(shots.iter().map(|&i| {
        let s = &minority.train[i];
        LabeledSample::new(s.image.clone(), minority_label, s.id)
    }));
    test.extend(relabel(&minority.test, minority_label));

    let train_ids: HashSet<u64> = train.iter().map(|s| s.id).collect();
    ensure(test.iter().all(|s| !train_ids.contains(&s.id)), || {
        "train and test share a sample seed".into()
    })?;
    Ok(Benchmark {
        train: Dataset::new(train, spec.classes())?,
        test: Dataset::new(test, spec.classes())?,
        minority_label,
    })
}
