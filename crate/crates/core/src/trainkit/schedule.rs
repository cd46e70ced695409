use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// SGD schedule: linear warmup, then step decay at each milestone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub iterations: usize,
    pub base_lr: f64,
    pub warmup: usize,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl TrainSchedule {
    /// Schedule of `iterations` steps with 5% warmup and decay by 0.1 at one
    /// and two thirds.
    pub fn scaled(iterations: usize, base_lr: f64) -> Self {
        let warmup = iterations / 20;
        let mut milestones = vec![iterations / 3, 2 * iterations / 3];
        milestones.retain(|&m| m > warmup);
        milestones.dedup();
        Self {
            iterations,
            base_lr,
            warmup,
            milestones,
            decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
        }
    }

    pub fn base_default() -> Self {
        Self::scaled(3000, 0.05)
    }

    pub fn finetune_default() -> Self {
        Self::scaled(600, 0.005)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.base_lr > 0.0 && self.base_lr.is_finite(), || {
            format!("base_lr must be > 0, got {}", self.base_lr)
        })?;
        ensure(self.batch_size >= 1, || "batch_size must be >= 1".into())?;
        ensure((0.0..1.0).contains(&self.momentum), || {
            format!("momentum must lie in [0, 1), got {}", self.momentum)
        })?;
        ensure(self.weight_decay >= 0.0, || "weight_decay must be >= 0".into())?;
        ensure(self.decay > 0.0 && self.decay <= 1.0, || {
            format!("decay must lie in (0, 1], got {}", self.decay)
        })?;
        if self.iterations == 0 {
            return Ok(());
        }
        ensure(self.milestones.windows(2).all(|w| w[0] < w[1]), || {
            format!("milestones must increase strictly, got {:?}", self.milestones)
        })?;
        if let Some(&first) = self.milestones.first() {
            ensure(self.warmup < first, || {
                format!("warmup {} must precede the first milestone {first}", self.warmup)
            })?;
            ensure(*self.milestones.last().unwrap() < self.iterations, || {
                format!("milestones {:?} must lie before iteration {}", self.milestones, self.iterations)
            })?;
        } else {
            ensure(self.warmup < self.iterations, || "warmup must be shorter than the schedule".into())?;
        }
        Ok(())
    }

    /// Learning rate used at iteration `t` (0-based).
    pub fn lr(&self, t: usize) -> f64 {
        if t < self.warmup {
            return self.base_lr * (t + 1) as f64 / self.warmup as f64;
        }
        let drops = self.milestones.iter().filter(|&&m| t >= m).count();
        let mut lr = self.base_lr;
        for _ in 0..drops {
            lr *= self.decay;
        }
        lr
    }
}
