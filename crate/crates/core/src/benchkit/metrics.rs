use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffnet::Classifier;
use crate::error::{ensure, Result};
use crate::LabeledSample;

/// Default false-positive-rate operating point for TPR@FPR.
pub const DEFAULT_FPR: f64 = 0.01;

/// Mean and population standard deviation over runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

/// Metrics of one trained model, all in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: Option<u64>,
    pub acc_minor: f64,
    pub tpr_at_fpr: f64,
    pub acc_all: f64,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_minor: Stat,
    pub tpr_at_fpr: Stat,
    pub acc_all: Stat,
    pub auc: Stat,
    pub fpr_point: f64,
    /// Set when some run had fewer real test samples than `1 / fpr_point`.
    pub unreliable: bool,
    /// Test samples per class of the (first) evaluated set.
    pub class_counts: Vec<usize>,
    pub runs: Vec<RunMetrics>,
}

pub const CSV_HEADER: &str = "acc_minor_mean,acc_minor_std,tpr_at_fpr_mean,tpr_at_fpr_std,acc_all_mean,acc_all_std,auc_mean,auc_std,fpr_point,runs";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        let mut out = String::new();
        for s in [self.acc_minor, self.tpr_at_fpr, self.acc_all, self.auc] {
            let _ = write!(out, "{},{},", s.mean, s.std);
        }
        let _ = write!(out, "{},{}", self.fpr_point, self.runs.len());
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }

    fn from_runs(runs: Vec<RunMetrics>, fpr_point: f64, unreliable: bool, class_counts: Vec<usize>) -> Self {
        let col = |f: fn(&RunMetrics) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            acc_minor: col(|r| r.acc_minor),
            tpr_at_fpr: col(|r| r.tpr_at_fpr),
            acc_all: col(|r| r.acc_all),
            auc: col(|r| r.auc),
            fpr_point,
            unreliable,
            class_counts,
            runs,
        }
    }
}

/// Area under the ROC curve by the trapezoid rule over every distinct
/// threshold. Exact rational arithmetic on counts, one final division.
pub fn auc_trapezoid(fake: &[f64], real: &[f64]) -> Result<f64> {
    ensure(!fake.is_empty() && !real.is_empty(), || "AUC needs both classes".into())?;
    let mut all: Vec<(f64, bool)> = fake.iter().map(|&s| (s, true)).chain(real.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < all.len() {
        let (prev_tp, prev_fp) = (tp, fp);
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - prev_fp) * (tp + prev_tp);
    }
    Ok(twice_area as f64 / (2 * fake.len() as u128 * real.len() as u128) as f64)
}

/// Pairwise AUC: `(#{fake > real} + 0.5 #{fake == real}) / (n_f n_r)`.
pub fn auc_pairwise(fake: &[f64], real: &[f64]) -> Result<f64> {
    ensure(!fake.is_empty() && !real.is_empty(), || "AUC needs both classes".into())?;
    let mut twice = 0u128;
    for &f in fake {
        for &r in real {
            twice += if f > r { 2 } else if f == r { 1 } else { 0 };
        }
    }
    Ok(twice as f64 / (2 * fake.len() as u128 * real.len() as u128) as f64)
}

/// TPR (percent) on `positive` at the smallest observed threshold `t` whose
/// real false-positive rate `#{real >= t} / n_r` is at most `fpr_point`.
/// Scores equal to the threshold count as positive.
pub fn tpr_at_fpr(positive: &[f64], real: &[f64], fpr_point: f64) -> Result<f64> {
    ensure(!positive.is_empty() && !real.is_empty(), || "TPR@FPR needs both classes".into())?;
    ensure((0.0..=1.0).contains(&fpr_point), || "fpr_point must lie in [0, 1]".into())?;
    let mut reals = real.to_vec();
    reals.sort_by(f64::total_cmp);
    let fpr = |t: f64| {
        let below = reals.partition_point(|&r| r < t);
        (reals.len() - below) as f64 / reals.len() as f64
    };
    let mut candidates: Vec<f64> = positive.iter().chain(real).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let threshold = candidates
        .into_iter()
        .find(|&t| fpr(t) <= fpr_point)
        .unwrap_or(f64::INFINITY);
    let hits = positive.iter().filter(|&&p| p >= threshold).count();
    Ok(100.0 * hits as f64 / positive.len() as f64)
}

/// Binary fake score: softmax mass on every class except 0 (real).
pub fn fake_score(probs: &[f64]) -> f64 {
    probs[1..].iter().sum()
}

/// The four metrics from raw fake scores.
pub fn metrics_from_scores(scores: &[f64], labels: &[usize], minority: usize, fpr_point: f64) -> Result<RunMetrics> {
    ensure(scores.len() == labels.len(), || "scores and labels differ in length".into())?;
    let real: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(&s, _)| s).collect();
    let fake: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l != 0).map(|(&s, _)| s).collect();
    let minor: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == minority).map(|(&s, _)| s).collect();
    ensure(!minor.is_empty(), || "test set has no minority samples".into())?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= 0.5) == (l != 0))
        .count();
    Ok(RunMetrics {
        seed: None,
        acc_minor: 100.0 * minor.iter().filter(|&&s| s >= 0.5).count() as f64 / minor.len() as f64,
        tpr_at_fpr: tpr_at_fpr(&minor, &real, fpr_point)?,
        acc_all: 100.0 * correct as f64 / scores.len() as f64,
        auc: 100.0 * auc_trapezoid(&fake, &real)?,
    })
}

/// Single-run report of `model` on `test`.
pub fn evaluate(model: &Classifier, test: &[LabeledSample], minority: usize, fpr_point: f64) -> Result<MetricsReport> {
    ensure(minority < model.num_classes(), || {
        format!("minority label {minority} outside the model's {} classes", model.num_classes())
    })?;
    let images: Vec<_> = test.iter().map(|s| &s.image).collect();
    let probs = model.predict_proba(&images)?;
    let scores: Vec<f64> = probs.iter().map(|p| fake_score(p)).collect();
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let run = metrics_from_scores(&scores, &labels, minority, fpr_point)?;
    let mut counts = vec![0; model.num_classes()];
    for &l in &labels {
        counts[l] += 1;
    }
    let unreliable = fpr_point <= 0.0 || (counts[0] as f64) < 1.0 / fpr_point;
    if unreliable {
        log::warn!(
            "only {} real test samples for FPR point {fpr_point}; TPR@FPR is unreliable",
            counts[0]
        );
    }
    Ok(MetricsReport::from_runs(vec![run], fpr_point, unreliable, counts))
}

/// Pools the runs of several reports into one (mean and population std).
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<MetricsReport> {
    ensure(!reports.is_empty(), || "nothing to aggregate".into())?;
    let fpr = reports[0].fpr_point;
    ensure(reports.iter().all(|r| r.fpr_point == fpr), || {
        "reports were computed at different FPR points".into()
    })?;
    let mut runs: Vec<RunMetrics> = reports.iter().flat_map(|r| r.runs.iter().cloned()).collect();
    // Order-independent: sort runs so any permutation aggregates identically.
    runs.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(a.acc_minor.total_cmp(&b.acc_minor))
            .then(a.tpr_at_fpr.total_cmp(&b.tpr_at_fpr))
            .then(a.acc_all.total_cmp(&b.acc_all))
            .then(a.auc.total_cmp(&b.auc))
    });
    let unreliable = reports.iter().any(|r| r.unreliable);
    Ok(MetricsReport::from_runs(runs, fpr, unreliable, reports[0].class_counts.clone()))
}

impl MetricsReport {
    /// Tags every run with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for r in &mut self.runs {
            r.seed = Some(seed);
        }
        self
    }
}
