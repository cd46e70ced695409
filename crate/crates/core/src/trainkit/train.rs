use std::fmt::Write as _;

use super::{Dataset, MethodSpec, TrainSchedule};
use crate::diffnet::{argmax, Classifier, Target};
use crate::error::{ensure, Error, Result};
use crate::gai::{augment_minority, Guides, ReplaceStats};
use crate::numcore::{SeededRng, Tensor};
use crate::LabeledSample;

/// Iterations between history rows.
pub const HISTORY_EVERY: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    /// Accuracy on the minority samples of the batch; `None` if it had none.
    pub minority_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    pub replace: ReplaceStats,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,lr,loss,train_minority_acc\n");
        for r in &self.rows {
            let acc = r.minority_acc.map(|a| format!("{a}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.iteration, r.lr, r.loss, acc);
        }
        out
    }
}

fn composition(batch: &[&LabeledSample], classes: usize) -> String {
    let mut counts = vec![0usize; classes];
    for s in batch {
        counts[s.label] += 1;
    }
    format!("batch class counts {counts:?}")
}

/// SGD with Nesterov momentum and weight decay, starting from `model`.
///
/// For methods with a generator, the minority members of every batch go
/// through the replacement pass against the current student before the
/// gradient step. `model` itself is never modified.
pub fn train(
    model: &Classifier,
    dataset: &Dataset,
    schedule: &TrainSchedule,
    method: &MethodSpec,
    rng: &mut SeededRng,
) -> Result<(Classifier, History)> {
    schedule.validate()?;
    method.validate()?;
    let classes = model.num_classes();
    ensure(dataset.classes() == classes, || {
        format!("dataset has {} classes, model has {classes}", dataset.classes())
    })?;
    let minority = method.gai.minority_label;
    ensure(minority < classes, || format!("minority label {minority} out of range"))?;
    let mut student = model.clone();
    let mut history = History::default();
    if schedule.iterations == 0 {
        return Ok((student, history));
    }
    ensure(!dataset.is_empty(), || "empty training set".into())?;
    if method.method == super::Method::Unseen {
        ensure(dataset.class_positions(minority).is_empty(), || {
            "the unseen method must not receive minority samples".into()
        })?;
    }
    let variant = method.method.variant();
    let pool: Vec<&LabeledSample> = if variant.is_some() {
        dataset.iter().filter(|s| s.label != minority).collect()
    } else {
        Vec::new()
    };
    let sampler = method.sampler();
    let mut velocity: Vec<Vec<f64>> = student.params().iter().map(|p| vec![0.0; p.len()]).collect();

    for t in 0..schedule.iterations {
        let lr = schedule.lr(t);
        let positions = sampler.sample_positions(dataset, rng, schedule.batch_size)?;
        let batch: Vec<&LabeledSample> = positions.iter().map(|&p| dataset.get(p)).collect();
        let mut targets: Vec<Target> = batch.iter().map(|s| Target::Class(s.label)).collect();
        let minority_idx: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].label == minority).collect();
        let mut replaced: Vec<Option<Tensor>> = vec![None; batch.len()];
        if let Some(v) = variant {
            if !minority_idx.is_empty() {
                let members: Vec<&LabeledSample> = minority_idx.iter().map(|&i| batch[i]).collect();
                let guides = Guides {
                    teacher: method.teacher.as_deref(),
                    student: &student,
                };
                let (aug, stats) = augment_minority(v, &members, &pool, &method.gai, guides, rng)
                    .map_err(|e| e.context(format!("replacement pass at iteration {t}")))?;
                history.replace.attempted += stats.attempted;
                history.replace.accepted += stats.accepted;
                history.replace.rejected += stats.rejected;
                history.replace.skipped_steps += stats.skipped_steps;
                for (&i, a) in minority_idx.iter().zip(aug) {
                    if a.replaced {
                        replaced[i] = Some(a.image);
                        targets[i] = a.target;
                    }
                }
            }
        }
        let refs: Vec<&Tensor> = batch
            .iter()
            .zip(&replaced)
            .map(|(s, r)| r.as_ref().unwrap_or(&s.image))
            .collect();
        let (loss, grads) = student.loss_and_grad(&refs, &targets)?;
        if !loss.is_finite() || grads.0.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: t,
                lr,
                detail: format!("loss {loss}, {}", composition(&batch, classes)),
            });
        }
        let minority_acc = if t % HISTORY_EVERY == 0 || t + 1 == schedule.iterations {
            let minor: Vec<&Tensor> = minority_idx.iter().map(|&i| refs[i]).collect();
            let acc = (!minor.is_empty()).then(|| {
                let probs = student.predict_proba(&minor).expect("checked shapes");
                probs.iter().filter(|p| argmax(p) == minority).count() as f64 / minor.len() as f64
            });
            Some(acc)
        } else {
            None
        };
        let mu = schedule.momentum;
        let wd = schedule.weight_decay;
        for ((p, g), v) in student.params_mut().iter_mut().zip(&grads.0).zip(&mut velocity) {
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                let d = gi + wd * *w;
                *vi = mu * *vi + d;
                *w -= lr * (d + mu * *vi);
            }
        }
        if let Some(acc) = minority_acc {
            history.rows.push(HistoryRow {
                iteration: t,
                lr,
                loss,
                minority_acc: acc,
            });
        }
    }
    Ok((student, history))
}

/// Continues training from an already trained `base` (a copy; `base` is not
/// modified). The schedule is expected to use a smaller learning rate than
/// the one `base` was trained with.
pub fn finetune_from_base(
    base: &Classifier,
    few_shot: &Dataset,
    schedule: &TrainSchedule,
    method: &MethodSpec,
    rng: &mut SeededRng,
) -> Result<Classifier> {
    train(base, few_shot, schedule, method, rng).map(|(m, _)| m)
}
