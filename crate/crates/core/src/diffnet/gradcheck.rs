//! Central finite-difference gradient checker.
//!
//! Uses only forward evaluation, so it is independent of the analytic
//! backward pass it is used to verify. Coordinates whose perturbation flips
//! any ReLU (or lands within `KINK_MARGIN` of a kink) are skipped.

use super::classifier::Classifier;
use super::loss::{cross_entropy_row, ScalarLoss, Target};
use crate::numcore::{SeededRng, Tensor};

pub const KINK_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-4,
            abs: 1e-8,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= self.abs || diff <= self.rel * analytic.abs().max(numeric.abs())
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub failed: usize,
    pub max_rel_error: f64,
}

impl CheckReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            (self.checked - self.failed) as f64 / self.checked as f64
        }
    }

    pub fn merge(&mut self, other: &CheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.failed += other.failed;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }

    fn record(&mut self, analytic: f64, numeric: f64, tol: Tolerance) {
        self.checked += 1;
        if !tol.accepts(analytic, numeric) {
            self.failed += 1;
        }
        let denom = analytic.abs().max(numeric.abs());
        if denom > tol.abs {
            self.max_rel_error = self.max_rel_error.max((analytic - numeric).abs() / denom);
        }
    }
}

fn batch_loss(model: &Classifier, images: &[&Tensor], targets: &[Target]) -> (f64, Vec<bool>, f64) {
    let mut total = 0.0;
    let mut pattern = Vec::new();
    let mut margin = f64::INFINITY;
    for (x, t) in images.iter().zip(targets) {
        let tr = model.trace(x.data());
        total += cross_entropy_row(tr.logits(), t).0;
        pattern.extend(tr.relu_pattern());
        margin = margin.min(tr.min_relu_margin());
    }
    (total / images.len() as f64, pattern, margin)
}

/// Compares `analytic` (aligned with `model.params()`) against central
/// differences of mean cross-entropy on `samples` random coordinates.
pub fn check_param_grads(
    model: &Classifier,
    images: &[&Tensor],
    targets: &[Target],
    analytic: &[Tensor],
    step: f64,
    samples: usize,
    tol: Tolerance,
    rng: &mut SeededRng,
) -> CheckReport {
    let mut report = CheckReport::default();
    let (_, base_pattern, margin) = batch_loss(model, images, targets);
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut probe = model.clone();
    for _ in 0..samples {
        let mut flat = rng.below(total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let orig = probe.params()[which].data()[flat];
        probe.params_mut()[which].data_mut()[flat] = orig + step;
        let (lp, pat_p, _) = batch_loss(&probe, images, targets);
        probe.params_mut()[which].data_mut()[flat] = orig - step;
        let (lm, pat_m, _) = batch_loss(&probe, images, targets);
        probe.params_mut()[which].data_mut()[flat] = orig;
        if pat_p != base_pattern || pat_m != base_pattern || margin < KINK_MARGIN {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * step);
        report.record(analytic[which].data()[flat], numeric, tol);
    }
    report
}

/// Compares an analytic input gradient against central differences of
/// `loss` at `samples` random pixels of `x`.
pub fn check_input_grad(
    model: &Classifier,
    loss: ScalarLoss,
    x: &Tensor,
    analytic: &Tensor,
    step: f64,
    samples: usize,
    tol: Tolerance,
    rng: &mut SeededRng,
) -> CheckReport {
    let mut report = CheckReport::default();
    let eval = |img: &[f64]| {
        let tr = model.trace(img);
        (loss.value_and_grad(tr.logits()).0, tr.relu_pattern(), tr.min_relu_margin())
    };
    let (_, base_pattern, margin) = eval(x.data());
    let mut probe = x.data().to_vec();
    for _ in 0..samples {
        let i = rng.below(probe.len());
        let orig = probe[i];
        probe[i] = orig + step;
        let (lp, pp, _) = eval(&probe);
        probe[i] = orig - step;
        let (lm, pm, _) = eval(&probe);
        probe[i] = orig;
        if pp != base_pattern || pm != base_pattern || margin < KINK_MARGIN {
            report.skipped += 1;
            continue;
        }
        report.record(analytic.data()[i], (lp - lm) / (2.0 * step), tol);
    }
    report
}
