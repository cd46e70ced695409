use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::GaiConfig;
use super::objective::{check_roles, interpolate, mix, network_grad, smoothness_grad};
use crate::diffnet::{softmax, Classifier, Target};
use crate::error::{ensure, Result};
use crate::numcore::{clamp01, derive_seed, l2_norm, SeededRng, Tensor};
use crate::LabeledSample;

/// Gradients with a smaller norm than this skip their update step.
pub const MIN_GRAD_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Teacher-guided interpolation.
    Gai,
    /// Teacher-guided additive perturbation of the majority sample.
    GaiMinus,
    /// Constant interpolation, hard minority label.
    NoTeacher,
    /// Constant interpolation with interpolated labels.
    Mixup,
}

impl Variant {
    pub fn uses_teacher(self) -> bool {
        matches!(self, Variant::Gai | Variant::GaiMinus)
    }
}

/// Coefficient tensor being optimized for one majority/minority pair.
#[derive(Clone, Debug)]
pub struct InterpState {
    pub alpha: Tensor,
    pub x_major: Tensor,
    pub x_minor: Tensor,
    pub source_class: usize,
    pub step: usize,
}

impl InterpState {
    pub fn materialize(&self) -> Tensor {
        interpolate(&self.alpha, &self.x_major, &self.x_minor)
            .expect("state keeps alpha in range and shapes aligned")
    }
}

#[derive(Clone, Debug)]
pub struct GenerationOutcome {
    pub sample: Tensor,
    pub accepted: bool,
    /// Teacher softmax probability of the minority class at `sample`.
    pub teacher_confidence: f64,
    pub variant: Variant,
    /// Final coefficient tensor (perturbation for [`Variant::GaiMinus`]).
    pub coefficients: Tensor,
    /// Steps skipped because the gradient vanished.
    pub skipped_steps: usize,
}

/// One recorded update, for replay checks.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub before: Tensor,
    pub gradient: Tensor,
    pub after: Tensor,
    pub skipped: bool,
}

fn check_pair(x_major: &Tensor, x_minor: &Tensor, teacher: &Classifier, student: &Classifier) -> Result<()> {
    x_major.same_shape(x_minor)?;
    teacher.check_input(x_major)?;
    student.check_input(x_major)?;
    Ok(())
}

fn minority_confidence(teacher: &Classifier, x: &Tensor, minority: usize) -> f64 {
    softmax(&teacher.logits(x.data()))[minority]
}

/// `alpha - eta * xi / |xi|`, clamped to `[0, 1]`.
fn normalized_step(current: &Tensor, xi: &Tensor, eta: f64, norm: f64, clamp: bool) -> Tensor {
    let moved = Tensor::new(
        current.shape().to_vec(),
        current
            .data()
            .iter()
            .zip(xi.data())
            .map(|(&a, &g)| a - eta * g / norm)
            .collect(),
    )
    .expect("same shape");
    if clamp {
        clamp01(&moved)
    } else {
        moved
    }
}

/// Guided adversarial interpolation of one majority/minority pair.
pub fn gai_generate(
    x_major: &Tensor,
    x_minor: &Tensor,
    source_class: usize,
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    rng: &mut SeededRng,
) -> Result<GenerationOutcome> {
    run_gai(x_major, x_minor, source_class, cfg, teacher, student, rng, None)
}

/// [`gai_generate`] that also returns every update step.
pub fn gai_generate_traced(
    x_major: &Tensor,
    x_minor: &Tensor,
    source_class: usize,
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    rng: &mut SeededRng,
) -> Result<(GenerationOutcome, Vec<StepRecord>)> {
    let mut trace = Vec::with_capacity(cfg.steps);
    let out = run_gai(x_major, x_minor, source_class, cfg, teacher, student, rng, Some(&mut trace))?;
    Ok((out, trace))
}

/// Initial coefficients: `alpha_init` plus uniform noise, clamped.
pub fn initial_alpha(shape: &[usize], cfg: &GaiConfig, rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    let s = cfg.noise_scale;
    let data = (0..n)
        .map(|_| (cfg.alpha_init + s * (2.0 * rng.uniform() - 1.0)).clamp(0.0, 1.0))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

#[allow(clippy::too_many_arguments)]
fn run_gai(
    x_major: &Tensor,
    x_minor: &Tensor,
    source_class: usize,
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    rng: &mut SeededRng,
    mut trace: Option<&mut Vec<StepRecord>>,
) -> Result<GenerationOutcome> {
    cfg.validate()?;
    check_pair(x_major, x_minor, teacher, student)?;
    check_roles(cfg, teacher, student, source_class)?;

    let mut state = InterpState {
        alpha: initial_alpha(x_major.shape(), cfg, rng),
        x_major: x_major.clone(),
        x_minor: x_minor.clone(),
        source_class,
        step: 0,
    };
    let mut skipped = 0;
    while state.step < cfg.steps {
        let x_star = state.materialize();
        let gx = network_grad(&x_star, cfg, teacher, student, source_class)?;
        let tv = smoothness_grad(&state.alpha)?;
        let xi = Tensor::new(
            state.alpha.shape().to_vec(),
            gx.data()
                .iter()
                .zip(x_major.data().iter().zip(x_minor.data()))
                .zip(tv.data())
                .map(|((&g, (&ma, &mi)), &t)| g * (ma - mi) + cfg.smooth_weight * t)
                .collect(),
        )?;
        let norm = l2_norm(&xi);
        let skip = !(norm >= MIN_GRAD_NORM) || !norm.is_finite();
        let next = if skip {
            skipped += 1;
            state.alpha.clone()
        } else {
            normalized_step(&state.alpha, &xi, cfg.step_size, norm, true)
        };
        debug_assert!(next.min() >= 0.0 && next.max() <= 1.0, "alpha left [0, 1]");
        if let Some(t) = trace.as_deref_mut() {
            t.push(StepRecord {
                before: state.alpha.clone(),
                gradient: xi,
                after: next.clone(),
                skipped: skip,
            });
        }
        state.alpha = next;
        state.step += 1;
    }
    let sample = state.materialize();
    let confidence = minority_confidence(teacher, &sample, cfg.minority_label);
    Ok(GenerationOutcome {
        accepted: confidence >= cfg.reject_threshold,
        teacher_confidence: confidence,
        sample,
        variant: Variant::Gai,
        coefficients: state.alpha,
        skipped_steps: skipped,
    })
}

/// Additive-perturbation variant: optimizes `delta` in `x* = x_major + delta`.
/// The smoothness term is applied to `delta`.
pub fn gai_minus_generate(
    x_major: &Tensor,
    source_class: usize,
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    rng: &mut SeededRng,
) -> Result<GenerationOutcome> {
    gai_minus_traced(x_major, source_class, cfg, teacher, student, rng).map(|(o, _)| o)
}

pub fn gai_minus_traced(
    x_major: &Tensor,
    source_class: usize,
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    _rng: &mut SeededRng,
) -> Result<(GenerationOutcome, Vec<StepRecord>)> {
    cfg.validate()?;
    check_pair(x_major, x_major, teacher, student)?;
    check_roles(cfg, teacher, student, source_class)?;
    let mut delta = Tensor::zeros_like(x_major);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut skipped = 0;
    let mut moved = false;
    for _ in 0..cfg.steps {
        let x_star = x_major.add(&delta)?;
        let gx = network_grad(&x_star, cfg, teacher, student, source_class)?;
        let tv = smoothness_grad(&delta)?;
        let xi = Tensor::new(
            delta.shape().to_vec(),
            gx.data()
                .iter()
                .zip(tv.data())
                .map(|(&g, &t)| g + cfg.smooth_weight * t)
                .collect(),
        )?;
        let norm = l2_norm(&xi);
        let skip = !(norm >= MIN_GRAD_NORM) || !norm.is_finite();
        let next = if skip {
            skipped += 1;
            delta.clone()
        } else {
            moved = true;
            normalized_step(&delta, &xi, cfg.step_size, norm, false)
        };
        trace.push(StepRecord {
            before: delta,
            gradient: xi,
            after: next.clone(),
            skipped: skip,
        });
        delta = next;
    }
    let sample = if moved { x_major.add(&delta)? } else { x_major.clone() };
    let confidence = minority_confidence(teacher, &sample, cfg.minority_label);
    let outcome = GenerationOutcome {
        accepted: confidence >= cfg.reject_threshold,
        teacher_confidence: confidence,
        sample,
        variant: Variant::GaiMinus,
        coefficients: delta,
        skipped_steps: skipped,
    };
    Ok((outcome, trace))
}

/// Constant-ratio interpolation without a teacher.
///
/// With `mix_labels` the target puts `alpha` on `source_class` and
/// `1 - alpha` on `minority_label`; otherwise it is the hard minority label.
pub fn fixed_interp_generate(
    x_major: &Tensor,
    x_minor: &Tensor,
    alpha: f64,
    mix_labels: bool,
    source_class: usize,
    minority_label: usize,
    classes: usize,
) -> Result<(Tensor, Target)> {
    ensure((0.0..=1.0).contains(&alpha), || {
        format!("mixing ratio {alpha} outside [0, 1]")
    })?;
    x_major.same_shape(x_minor)?;
    ensure(source_class < classes && minority_label < classes, || {
        format!("classes {source_class}/{minority_label} out of range for {classes}")
    })?;
    let data = x_major
        .data()
        .iter()
        .zip(x_minor.data())
        .map(|(&ma, &mi)| mix(alpha, ma, mi))
        .collect();
    let image = Tensor::new(x_major.shape().to_vec(), data)?;
    let target = if mix_labels {
        let mut d = vec![0.0; classes];
        d[source_class] += alpha;
        d[minority_label] += 1.0 - alpha;
        Target::Dist(d)
    } else {
        Target::Class(minority_label)
    };
    Ok((image, target))
}

/// A minority training example after the replacement pass.
#[derive(Clone, Debug)]
pub struct AugmentedSample {
    pub image: Tensor,
    pub target: Target,
    pub replaced: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplaceStats {
    pub attempted: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub skipped_steps: usize,
}

/// Models a replacement pass needs; the teacher is only used by guided variants.
#[derive(Clone, Copy)]
pub struct Guides<'a> {
    pub teacher: Option<&'a Classifier>,
    pub student: &'a Classifier,
}

/// Replacement pass over minority duplicates for any [`Variant`].
///
/// Each sample independently draws `z ~ Bernoulli(p)`; on success it pairs
/// with a uniformly drawn majority sample and is replaced by the generated
/// one (guided variants only when the teacher accepts it). Sample `i` uses
/// the child stream `i` of a seed forked from `rng`, so results do not
/// depend on thread scheduling.
pub fn augment_minority(
    variant: Variant,
    minority: &[&LabeledSample],
    majority_pool: &[&LabeledSample],
    cfg: &GaiConfig,
    guides: Guides<'_>,
    rng: &mut SeededRng,
) -> Result<(Vec<AugmentedSample>, ReplaceStats)> {
    cfg.validate()?;
    ensure(!majority_pool.is_empty(), || "empty majority pool".into())?;
    for s in minority {
        ensure(s.label == cfg.minority_label, || {
            format!("minority batch contains label {}, expected {}", s.label, cfg.minority_label)
        })?;
    }
    let teacher = if variant.uses_teacher() {
        Some(guides.teacher.ok_or_else(|| {
            crate::Error::contract(format!("{variant:?} needs a teacher model"))
        })?)
    } else {
        None
    };
    let classes = guides.student.num_classes();
    let batch_seed = rng.next_u64();
    let results: Vec<Result<(AugmentedSample, ReplaceStats)>> = minority
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = SeededRng::new(derive_seed(batch_seed, i as u64));
            let keep = AugmentedSample {
                image: s.image.clone(),
                target: Target::Class(s.label),
                replaced: false,
            };
            let mut stats = ReplaceStats::default();
            if !r.bernoulli(cfg.replace_prob)? {
                return Ok((keep, stats));
            }
            stats.attempted = 1;
            let major = majority_pool[r.below(majority_pool.len())];
            ensure(major.label != cfg.minority_label, || {
                "majority pool contains a minority sample".into()
            })?;
            let out = match variant {
                Variant::Gai => Some(gai_generate(
                    &major.image,
                    &s.image,
                    major.label,
                    cfg,
                    teacher.unwrap(),
                    guides.student,
                    &mut r,
                )?),
                Variant::GaiMinus => Some(gai_minus_generate(
                    &major.image,
                    major.label,
                    cfg,
                    teacher.unwrap(),
                    guides.student,
                    &mut r,
                )?),
                Variant::NoTeacher | Variant::Mixup => {
                    let (image, target) = fixed_interp_generate(
                        &major.image,
                        &s.image,
                        cfg.alpha_init,
                        variant == Variant::Mixup,
                        major.label,
                        cfg.minority_label,
                        classes,
                    )?;
                    stats.accepted = 1;
                    return Ok((
                        AugmentedSample {
                            image,
                            target,
                            replaced: true,
                        },
                        stats,
                    ));
                }
            };
            let out = out.unwrap();
            stats.skipped_steps = out.skipped_steps;
            if out.accepted {
                stats.accepted = 1;
                Ok((
                    AugmentedSample {
                        image: out.sample,
                        target: Target::Class(cfg.minority_label),
                        replaced: true,
                    },
                    stats,
                ))
            } else {
                stats.rejected = 1;
                Ok((keep, stats))
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(minority.len());
    let mut total = ReplaceStats::default();
    for r in results {
        let (s, st) = r?;
        samples.push(s);
        total.attempted += st.attempted;
        total.accepted += st.accepted;
        total.rejected += st.rejected;
        total.skipped_steps += st.skipped_steps;
    }
    Ok((samples, total))
}

/// Guided replacement of minority duplicates; labels are never changed.
pub fn replace_batch(
    minority_batch: &[LabeledSample],
    majority_pool: &[&LabeledSample],
    cfg: &GaiConfig,
    teacher: &Classifier,
    student: &Classifier,
    rng: &mut SeededRng,
) -> Result<Vec<LabeledSample>> {
    let refs: Vec<&LabeledSample> = minority_batch.iter().collect();
    let (augmented, _) = augment_minority(
        Variant::Gai,
        &refs,
        majority_pool,
        cfg,
        Guides {
            teacher: Some(teacher),
            student,
        },
        rng,
    )?;
    Ok(minority_batch
        .iter()
        .zip(augmented)
        .map(|(orig, a)| LabeledSample {
            image: a.image,
            label: orig.label,
            id: orig.id,
        })
        .collect())
}

/// Inputs and outputs of one generation, for visual inspection.
#[derive(Clone, Debug)]
pub struct Quintuple {
    pub x_major: Tensor,
    pub x_minor: Tensor,
    pub x_init: Tensor,
    pub x_adv: Tensor,
    pub alpha: Tensor,
}

impl Quintuple {
    /// Runs [`gai_generate`] and captures its inputs, `x*_0` and the result.
    pub fn capture(
        x_major: &Tensor,
        x_minor: &Tensor,
        source_class: usize,
        cfg: &GaiConfig,
        teacher: &Classifier,
        student: &Classifier,
        rng: &mut SeededRng,
    ) -> Result<(Self, GenerationOutcome)> {
        let (out, trace) = gai_generate_traced(x_major, x_minor, source_class, cfg, teacher, student, rng)?;
        let alpha0 = trace.first().map(|s| s.before.clone()).unwrap_or_else(|| out.coefficients.clone());
        let q = Quintuple {
            x_major: x_major.clone(),
            x_minor: x_minor.clone(),
            x_init: interpolate(&alpha0, x_major, x_minor)?,
            x_adv: out.sample.clone(),
            alpha: out.coefficients.clone(),
        };
        Ok((q, out))
    }

    pub fn tensors(&self) -> [&Tensor; 5] {
        [&self.x_major, &self.x_minor, &self.x_init, &self.x_adv, &self.alpha]
    }
}
