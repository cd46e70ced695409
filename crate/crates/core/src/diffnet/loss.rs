use crate::error::{ensure, Result};
use crate::numcore::Tensor;

/// Training target for one sample: a hard class or a distribution over classes.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Dist(Vec<f64>),
}

impl Target {
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self {
            Target::Class(c) => ensure(*c < classes, || {
                format!("label {c} out of range for {classes} classes")
            }),
            Target::Dist(d) => {
                ensure(d.len() == classes, || {
                    format!("target distribution has {} entries, expected {classes}", d.len())
                })?;
                let s: f64 = d.iter().sum();
                ensure(d.iter().all(|&v| v >= 0.0) && (s - 1.0).abs() < 1e-9, || {
                    format!("target {d:?} is not a probability distribution")
                })
            }
        }
    }

    /// Probability the target assigns to `class`.
    pub fn mass(&self, class: usize) -> f64 {
        match self {
            Target::Class(c) => f64::from(u8::from(*c == class)),
            Target::Dist(d) => d[class],
        }
    }

    /// Class with the largest target mass (first on ties).
    pub fn argmax(&self) -> usize {
        match self {
            Target::Class(c) => *c,
            Target::Dist(d) => argmax(d),
        }
    }
}

/// Scalar functions of a single sample's logits whose input gradient the
/// interpolation engine needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarLoss {
    /// `-log softmax(z)[c]`
    CrossEntropy(usize),
    /// `z[c]`
    Logit(usize),
    /// `softmax(z)[c]`
    Probability(usize),
}

impl ScalarLoss {
    pub fn class(&self) -> usize {
        match *self {
            ScalarLoss::CrossEntropy(c) | ScalarLoss::Logit(c) | ScalarLoss::Probability(c) => c,
        }
    }

    /// Value and gradient with respect to the logits.
    pub fn value_and_grad(&self, logits: &[f64]) -> (f64, Vec<f64>) {
        match *self {
            ScalarLoss::CrossEntropy(c) => {
                let p = softmax(logits);
                let value = -log_softmax_at(logits, c);
                let mut g = p;
                g[c] -= 1.0;
                (value, g)
            }
            ScalarLoss::Logit(c) => {
                let mut g = vec![0.0; logits.len()];
                g[c] = 1.0;
                (logits[c], g)
            }
            ScalarLoss::Probability(c) => {
                let p = softmax(logits);
                let pc = p[c];
                let g = p
                    .iter()
                    .enumerate()
                    .map(|(k, &pk)| if k == c { pc * (1.0 - pc) } else { -pc * pk })
                    .collect();
                (pc, g)
            }
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax_at(z: &[f64], c: usize) -> f64 {
    z[c] - log_sum_exp(z)
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of one logit row against a target, plus its logit gradient.
pub fn cross_entropy_row(z: &[f64], target: &Target) -> (f64, Vec<f64>) {
    let p = softmax(z);
    match target {
        Target::Class(c) => {
            let mut g = p;
            g[*c] -= 1.0;
            (-log_softmax_at(z, *c), g)
        }
        Target::Dist(t) => {
            let lse = log_sum_exp(z);
            let loss = t
                .iter()
                .zip(z)
                .filter(|(&tk, _)| tk > 0.0)
                .map(|(&tk, &zk)| -tk * (zk - lse))
                .sum();
            let g = p.iter().zip(t).map(|(pk, tk)| pk - tk).collect();
            (loss, g)
        }
    }
}

/// Mean cross-entropy of a `[B, K]` logit batch against hard labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    ensure(logits.rank() == 2, || {
        format!("logits must be [B, K], got {:?}", logits.shape())
    })?;
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    ensure(labels.len() == b, || {
        format!("{} labels for a batch of {b}", labels.len())
    })?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        ensure(y < k, || format!("label {y} out of range for {k} classes"))?;
        total -= log_softmax_at(logits.row(i), y);
    }
    Ok(total / b as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> Tensor {
        let k = rows[0].len();
        Tensor::new(vec![rows.len(), k], rows.concat()).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let l = cross_entropy(&logits(&[&[0.3; 4]]), &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn saturated_margin() {
        let l = cross_entropy(&logits(&[&[50.0, 0.0, 0.0]]), &[0]).unwrap();
        assert!(l < 1e-20, "{l}");
        assert!(l >= 0.0);
    }

    #[test]
    fn two_class_value() {
        // -log(e / (e + e^2)) = log(1 + e)
        let l = cross_entropy(&logits(&[&[1.0, 2.0]]), &[0]).unwrap();
        assert!((l - (1.0 + 1f64.exp()).ln()).abs() < 1e-15);
        assert!((l - 1.313262).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_label() {
        assert!(cross_entropy(&logits(&[&[0.0, 0.0]]), &[2]).is_err());
    }

    #[test]
    fn softmax_sums_to_one_under_large_logits() {
        let p = softmax(&[1000.0, -1000.0, 999.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn soft_target_matches_hard_when_one_hot() {
        let z = [0.2, -1.0, 3.0];
        let (a, ga) = cross_entropy_row(&z, &Target::Class(1));
        let (b, gb) = cross_entropy_row(&z, &Target::Dist(vec![0.0, 1.0, 0.0]));
        assert!((a - b).abs() < 1e-14);
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_loss_grads_match_differences() {
        let z = [0.3, -0.7, 1.1, 0.05];
        for loss in [
            ScalarLoss::CrossEntropy(2),
            ScalarLoss::Logit(1),
            ScalarLoss::Probability(3),
        ] {
            let (_, g) = loss.value_and_grad(&z);
            for k in 0..z.len() {
                let mut zp = z;
                let mut zm = z;
                zp[k] += 1e-6;
                zm[k] -= 1e-6;
                let fd = (loss.value_and_grad(&zp).0 - loss.value_and_grad(&zm).0) / 2e-6;
                assert!((fd - g[k]).abs() < 1e-8, "{loss:?} k={k}: {fd} vs {}", g[k]);
            }
        }
    }
}
