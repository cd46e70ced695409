use super::config::{GaiConfig, RestrainMode};
use crate::diffnet::{Classifier, ScalarLoss};
use crate::error::{ensure, Result};
use crate::numcore::Tensor;

/// `alpha * x_major + (1 - alpha) * x_minor`, elementwise.
pub fn interpolate(alpha: &Tensor, x_major: &Tensor, x_minor: &Tensor) -> Result<Tensor> {
    alpha.same_shape(x_major)?;
    alpha.same_shape(x_minor)?;
    ensure(alpha.data().iter().all(|a| (0.0..=1.0).contains(a)), || {
        "interpolation coefficients must lie in [0, 1]".into()
    })?;
    let data = alpha
        .data()
        .iter()
        .zip(x_major.data())
        .zip(x_minor.data())
        .map(|((&a, &ma), &mi)| mix(a, ma, mi))
        .collect();
    Tensor::new(x_major.shape().to_vec(), data)
}

#[inline]
pub(crate) fn mix(a: f64, major: f64, minor: f64) -> f64 {
    a * major + (1.0 - a) * minor
}

fn spatial_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    ensure(t.rank() == 3, || {
        format!("expected an [H, W, D] tensor, got {:?}", t.shape())
    })?;
    Ok((t.shape()[0], t.shape()[1], t.shape()[2]))
}

/// Anisotropic squared total variation, each direction normalized by its
/// number of neighbour pairs. Zero when `H = W = 1`.
pub fn smoothness_loss(alpha: &Tensor) -> Result<f64> {
    let (h, w, d) = spatial_dims(alpha)?;
    let a = alpha.data();
    let idx = |y: usize, x: usize, c: usize| (y * w + x) * d + c;
    let mut vertical = 0.0;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            for c in 0..d {
                let diff = a[idx(y + 1, x, c)] - a[idx(y, x, c)];
                vertical += diff * diff;
            }
        }
    }
    let mut horizontal = 0.0;
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            for c in 0..d {
                let diff = a[idx(y, x + 1, c)] - a[idx(y, x, c)];
                horizontal += diff * diff;
            }
        }
    }
    let mut loss = 0.0;
    if h > 1 {
        loss += vertical / ((h - 1) * w) as f64;
    }
    if w > 1 {
        loss += horizontal / (h * (w - 1)) as f64;
    }
    Ok(loss)
}

/// Gradient of [`smoothness_loss`].
pub fn smoothness_grad(alpha: &Tensor) -> Result<Tensor> {
    let (h, w, d) = spatial_dims(alpha)?;
    let a = alpha.data();
    let idx = |y: usize, x: usize, c: usize| (y * w + x) * d + c;
    let mut g = vec![0.0; a.len()];
    if h > 1 {
        let k = 2.0 / ((h - 1) * w) as f64;
        for y in 0..h - 1 {
            for x in 0..w {
                for c in 0..d {
                    let (lo, hi) = (idx(y, x, c), idx(y + 1, x, c));
                    let diff = k * (a[hi] - a[lo]);
                    g[hi] += diff;
                    g[lo] -= diff;
                }
            }
        }
    }
    if w > 1 {
        let k = 2.0 / (h * (w - 1)) as f64;
        for y in 0..h {
            for x in 0..w - 1 {
                for c in 0..d {
                    let (lo, hi) = (idx(y, x, c), idx(y, x + 1, c));
                    let diff = k * (a[hi] - a[lo]);
                    g[hi] += diff;
                    g[lo] -= diff;
                }
            }
        }
    }
    Tensor::new(alpha.shape().to_vec(), g)
}

/// The three terms of the generation objective, unweighted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    /// Teacher cross-entropy towards the minority class.
    pub cls: f64,
    /// Student score of the source class.
    pub restrain: f64,
    pub smooth: f64,
}

impl ObjectiveTerms {
    pub fn total(&self, cfg: &GaiConfig) -> f64 {
        self.cls + cfg.restrain_weight * self.restrain + cfg.smooth_weight * self.smooth
    }
}

pub(crate) fn restrain_loss(cfg: &GaiConfig, source_class: usize) -> ScalarLoss {
    match cfg.restrain {
        RestrainMode::Softmax => ScalarLoss::Probability(source_class),
        RestrainMode::Logit => ScalarLoss::Logit(source_class),
    }
}

pub(crate) fn check_roles(
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    source_class: usize,
) -> Result<()> {
    ensure(source_class != cfg.minority_label, || {
        format!(
            "source class {source_class} equals the minority label; the majority sample must come from a majority class"
        )
    })?;
    for (name, m) in [("teacher", teacher), ("student", student)] {
        ensure(
            cfg.minority_label < m.num_classes() && source_class < m.num_classes(),
            || {
                format!(
                    "{name} has {} classes; minority {} / source {source_class} out of range",
                    m.num_classes(),
                    cfg.minority_label
                )
            },
        )?;
    }
    Ok(())
}

/// Evaluates each term of the objective at `x_star`; the smoothness term is
/// taken over `smooth_of` (the coefficient tensor, or the perturbation for
/// the additive variant).
pub fn objective_terms(
    x_star: &Tensor,
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    smooth_of: &Tensor,
    source_class: usize,
) -> Result<ObjectiveTerms> {
    check_roles(cfg, teacher, student, source_class)?;
    Ok(ObjectiveTerms {
        cls: teacher.scalar_loss(ScalarLoss::CrossEntropy(cfg.minority_label), x_star)?,
        restrain: student.scalar_loss(restrain_loss(cfg, source_class), x_star)?,
        smooth: smoothness_loss(smooth_of)?,
    })
}

/// `L = CE(g(x*), minority) + lambda * f(x*)[source] + beta * TV(alpha)`.
pub fn objective(
    x_star: &Tensor,
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    alpha: &Tensor,
    source_class: usize,
) -> Result<f64> {
    objective_terms(x_star, cfg, teacher, student, alpha, source_class).map(|t| t.total(cfg))
}

/// Gradient of the two network terms with respect to `x_star`.
pub(crate) fn network_grad(
    x_star: &Tensor,
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    source_class: usize,
) -> Result<Tensor> {
    let (_, mut g) = teacher.grad_input(ScalarLoss::CrossEntropy(cfg.minority_label), x_star)?;
    if cfg.restrain_weight != 0.0 {
        let (_, gs) = student.grad_input(restrain_loss(cfg, source_class), x_star)?;
        for (a, b) in g.data_mut().iter_mut().zip(gs.data()) {
            *a += cfg.restrain_weight * b;
        }
    }
    Ok(g)
}

/// Full gradient of the objective with respect to the coefficient tensor.
pub fn objective_grad_alpha(
    alpha: &Tensor,
    x_major: &Tensor,
    x_minor: &Tensor,
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    source_class: usize,
) -> Result<Tensor> {
    check_roles(cfg, teacher, student, source_class)?;
    let x_star = interpolate(alpha, x_major, x_minor)?;
    let gx = network_grad(&x_star, cfg, teacher, student, source_class)?;
    let tv = smoothness_grad(alpha)?;
    let data = gx
        .data()
        .iter()
        .zip(x_major.data().iter().zip(x_minor.data()))
        .zip(tv.data())
        .map(|((&g, (&ma, &mi)), &t)| g * (ma - mi) + cfg.smooth_weight * t)
        .collect();
    Tensor::new(alpha.shape().to_vec(), data)
}
