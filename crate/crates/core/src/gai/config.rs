use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// How the student's restrain term reads the source class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RestrainMode {
    /// Post-softmax probability of the source class, bounded in `[0, 1]`.
    #[default]
    Softmax,
    /// Raw logit of the source class.
    Logit,
}

/// Knobs of the guided interpolation loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaiConfig {
    /// Number of normalized gradient steps `T`.
    pub steps: usize,
    /// Step size `eta`.
    pub step_size: f64,
    /// Weight `lambda` of the student restrain term.
    pub restrain_weight: f64,
    /// Weight `beta` of the total-variation term.
    pub smooth_weight: f64,
    /// Rejection threshold `tau` on the teacher's minority confidence.
    pub reject_threshold: f64,
    /// Per-duplicate replacement probability `p`.
    pub replace_prob: f64,
    /// Constant the coefficient tensor starts from.
    pub alpha_init: f64,
    /// Half-width of the uniform noise added to the initial coefficients.
    pub noise_scale: f64,
    /// Class index of the minority family (`n + 1`).
    pub minority_label: usize,
    pub restrain: RestrainMode,
}

impl Default for GaiConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            step_size: 1.0,
            restrain_weight: 0.5,
            smooth_weight: 10.0,
            reject_threshold: 0.5,
            replace_prob: 0.99,
            alpha_init: 0.75,
            noise_scale: 0.01,
            minority_label: 1,
            restrain: RestrainMode::Softmax,
        }
    }
}

impl GaiConfig {
    pub fn with_minority(minority_label: usize) -> Self {
        Self {
            minority_label,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.step_size > 0.0 && self.step_size.is_finite(), || {
            format!("step_size must be > 0, got {}", self.step_size)
        })?;
        ensure(self.restrain_weight >= 0.0 && self.restrain_weight.is_finite(), || {
            format!("restrain_weight must be >= 0, got {}", self.restrain_weight)
        })?;
        ensure(self.smooth_weight >= 0.0 && self.smooth_weight.is_finite(), || {
            format!("smooth_weight must be >= 0, got {}", self.smooth_weight)
        })?;
        ensure((0.0..=1.0).contains(&self.reject_threshold), || {
            format!("reject_threshold must lie in [0, 1], got {}", self.reject_threshold)
        })?;
        ensure((0.0..=1.0).contains(&self.replace_prob), || {
            format!("replace_prob must lie in [0, 1], got {}", self.replace_prob)
        })?;
        ensure(self.alpha_init > 0.0 && self.alpha_init <= 1.0, || {
            format!("alpha_init must lie in (0, 1], got {}", self.alpha_init)
        })?;
        ensure(
            self.noise_scale >= 0.0
                && self.alpha_init - self.noise_scale >= 0.0
                && self.alpha_init + self.noise_scale <= 1.0,
            || {
                format!(
                    "alpha_init +- noise_scale must stay in [0, 1], got {} +- {}",
                    self.alpha_init, self.noise_scale
                )
            },
        )?;
        Ok(())
    }

    /// Largest noise the invariant admits around `alpha_init`, capped at `want`.
    pub fn fit_noise(alpha_init: f64, want: f64) -> f64 {
        want.min(alpha_init).min(1.0 - alpha_init).max(0.0)
    }
}
