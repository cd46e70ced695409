use std::sync::Arc;

use super::*;
use crate::diffnet::{ArchSpec, Classifier};
use crate::gai::GaiConfig;
use crate::numcore::{SeededRng, Tensor};
use crate::LabeledSample;

fn sized_dataset(sizes: &[usize]) -> Dataset {
    let mut samples = Vec::new();
    let mut id = 0;
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            samples.push(LabeledSample::new(Tensor::zeros(&[1, 1, 1]), c, id));
            id += 1;
        }
    }
    Dataset::new(samples, sizes.len()).unwrap()
}

fn class_freq(ds: &Dataset, spec: SamplerSpec, draws: usize, seed: u64) -> Vec<usize> {
    let mut rng = SeededRng::new(seed);
    let mut counts = vec![0; ds.classes()];
    for p in spec.sample_positions(ds, &mut rng, draws).unwrap() {
        counts[ds.get(p).label] += 1;
    }
    counts
}

fn within(count: usize, n: usize, p: f64, sigmas: f64) -> bool {
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (count as f64 - n as f64 * p).abs() <= sigmas * sd
}

#[test]
fn class_balanced_frequencies() {
    let ds = sized_dataset(&[1000, 50]);
    let c = class_freq(&ds, SamplerSpec::class_balanced(), 10_000, 1);
    assert!(within(c[0], 10_000, 0.5, 3.0), "{c:?}");
    assert!(within(c[1], 10_000, 0.5, 3.0), "{c:?}");

    let ds = sized_dataset(&[300, 20, 900, 5]);
    let c = class_freq(&ds, SamplerSpec::class_balanced(), 20_000, 2);
    for &n in &c {
        assert!(within(n, 20_000, 0.25, 4.0), "{c:?}");
    }
}

#[test]
fn instance_balanced_frequencies() {
    let ds = sized_dataset(&[1000, 50]);
    let c = class_freq(&ds, SamplerSpec::instance_balanced(), 10_000, 3);
    assert!(within(c[1], 10_000, 50.0 / 1050.0, 3.0), "{c:?}");
}

#[test]
fn duplication_reweights_minority() {
    let ds = sized_dataset(&[1000, 50]);
    let dup = SamplerSpec::balancing_duplication(&ds, 1);
    assert_eq!(dup, 20);
    let spec = SamplerSpec {
        duplication: dup,
        minority: Some(1),
        ..SamplerSpec::instance_balanced()
    };
    let c = class_freq(&ds, spec, 10_000, 4);
    assert!(within(c[1], 10_000, 0.5, 3.0), "{c:?}");
    assert!(SamplerSpec {
        duplication: 0,
        ..spec
    }
    .validate()
    .is_err());
}

#[test]
fn single_class_modes_agree() {
    let ds = sized_dataset(&[40]);
    for spec in [SamplerSpec::class_balanced(), SamplerSpec::instance_balanced()] {
        let mut rng = SeededRng::new(5);
        let mut hits = vec![0usize; 40];
        for p in spec.sample_positions(&ds, &mut rng, 40_000).unwrap() {
            hits[p] += 1;
        }
        for &h in &hits {
            assert!(within(h, 40_000, 1.0 / 40.0, 4.0));
        }
    }
}

#[test]
fn class_balanced_rejects_empty_class() {
    let ds = sized_dataset(&[10, 0, 3]);
    let mut rng = SeededRng::new(6);
    assert!(SamplerSpec::class_balanced().sample_positions(&ds, &mut rng, 4).is_err());
    assert!(SamplerSpec::instance_balanced().sample_positions(&ds, &mut rng, 4).is_ok());
    let empty = sized_dataset(&[0, 0]);
    assert!(sample_batch(&empty, &SamplerSpec::instance_balanced(), &mut rng, 1).is_err());
}

#[test]
fn dataset_views_share_labels() {
    let ds = sized_dataset(&[3, 2, 4]);
    assert_eq!(ds.class_counts(), vec![3, 2, 4]);
    let v = ds.without_class(1);
    assert_eq!(v.class_counts(), vec![3, 0, 4]);
    assert_eq!(v.len(), 7);
    assert!(v.iter().all(|s| s.label != 1));
    assert!(Dataset::new(vec![LabeledSample::new(Tensor::zeros(&[1]), 3, 0)], 3).is_err());
}

#[test]
fn warmup_and_decay_are_exact() {
    let s = TrainSchedule {
        iterations: 300,
        base_lr: 0.05,
        warmup: 15,
        milestones: vec![100, 200],
        decay: 0.1,
        momentum: 0.9,
        weight_decay: 0.0,
        batch_size: 4,
    };
    s.validate().unwrap();
    for t in 0..15 {
        assert_eq!(s.lr(t), 0.05 * (t + 1) as f64 / 15.0);
    }
    assert_eq!(s.lr(15), 0.05);
    assert_eq!(s.lr(99), 0.05);
    assert_eq!(s.lr(100), 0.05 * 0.1);
    assert_eq!(s.lr(199), 0.05 * 0.1);
    assert_eq!(s.lr(200), 0.05 * 0.1 * 0.1);
    TrainSchedule::base_default().validate().unwrap();
    TrainSchedule::finetune_default().validate().unwrap();
    assert_eq!(TrainSchedule::base_default().base_lr / TrainSchedule::finetune_default().base_lr, 10.0);
    for bad in [
        TrainSchedule { warmup: 100, ..s.clone() },
        TrainSchedule { milestones: vec![100, 300], ..s.clone() },
        TrainSchedule { milestones: vec![200, 100], ..s.clone() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn method_names_roundtrip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    let err = "gai+".parse::<Method>().unwrap_err();
    assert!(err.is_usage());
    assert!(MethodSpec::new(Method::Gai, GaiConfig::default()).validate().is_err());
    assert!(MethodSpec::new(Method::GaiMinus, GaiConfig::default()).validate().is_err());
    MethodSpec::new(Method::Mixup, GaiConfig::default()).validate().unwrap();
}

/// Two well-separated blob classes plus a few minority samples.
fn toy_problem(seed: u64) -> (Dataset, Classifier) {
    let mut rng = SeededRng::new(seed);
    let mut samples = Vec::new();
    for i in 0..60u64 {
        let label = (i % 3) as usize;
        let label = if label == 2 && i >= 15 { (i % 2) as usize } else { label };
        let data: Vec<f64> = (0..48)
            .map(|k| 0.3 * label as f64 + 0.1 * ((k % 3) == label) as u8 as f64 + 0.05 * rng.uniform())
            .collect();
        samples.push(LabeledSample::new(Tensor::new(vec![4, 4, 3], data).unwrap(), label, i));
    }
    let ds = Dataset::new(samples, 3).unwrap();
    let model = Classifier::new(ArchSpec::reference(4, 4, 3, 3), &mut rng).unwrap();
    (ds, model)
}

fn short_schedule(iterations: usize) -> TrainSchedule {
    TrainSchedule {
        batch_size: 8,
        ..TrainSchedule::scaled(iterations, 0.05)
    }
}

#[test]
fn zero_iterations_return_input_model() {
    let (ds, model) = toy_problem(7);
    let spec = MethodSpec::new(Method::Cb, GaiConfig::with_minority(2));
    let (out, hist) = train(&model, &ds, &short_schedule(0), &spec, &mut SeededRng::new(1)).unwrap();
    assert_eq!(out, model);
    assert!(hist.rows.is_empty());
    let out = finetune_from_base(&model, &ds, &short_schedule(0), &spec, &mut SeededRng::new(1)).unwrap();
    assert_eq!(out.fingerprint(), model.fingerprint());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let (ds, model) = toy_problem(8);
    let spec = MethodSpec::new(Method::Ib, GaiConfig::with_minority(2));
    let sched = short_schedule(60);
    let (a, ha) = train(&model, &ds, &sched, &spec, &mut SeededRng::new(2)).unwrap();
    let (b, hb) = train(&model, &ds, &sched, &spec, &mut SeededRng::new(2)).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(ha, hb);
    assert_eq!(ha.rows.len(), 7);
    assert_eq!(ha.rows.last().unwrap().iteration, 59);
    let csv = ha.to_csv();
    assert!(csv.starts_with("iteration,lr,loss,train_minority_acc\n"));
    assert_eq!(csv.lines().count(), 8);
    let first = ha.rows[0].loss;
    let last = ha.rows.last().unwrap().loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn unseen_refuses_minority_data() {
    let (ds, model) = toy_problem(9);
    let spec = MethodSpec::new(Method::Unseen, GaiConfig::with_minority(2));
    assert!(train(&model, &ds, &short_schedule(5), &spec, &mut SeededRng::new(3)).is_err());
    let majority = ds.without_class(2);
    let mut rng = SeededRng::new(3);
    for _ in 0..50 {
        let batch = sample_batch(&majority, &spec.sampler(), &mut rng, 8).unwrap();
        assert!(batch.iter().all(|s| s.label != 2));
    }
    train(&model, &majority, &short_schedule(5), &spec, &mut SeededRng::new(3)).unwrap();
}

#[test]
fn guided_training_leaves_teacher_untouched() {
    let (ds, model) = toy_problem(10);
    let teacher = Arc::new(Classifier::new(model.arch().clone(), &mut SeededRng::new(11)).unwrap());
    let before = teacher.fingerprint();
    let cfg = GaiConfig {
        steps: 3,
        reject_threshold: 0.0,
        ..GaiConfig::with_minority(2)
    };
    for m in [Method::Gai, Method::GaiMinus] {
        let spec = MethodSpec::new(m, cfg.clone()).with_teacher(Arc::clone(&teacher));
        let (_, hist) = train(&model, &ds, &short_schedule(20), &spec, &mut SeededRng::new(4)).unwrap();
        assert!(hist.replace.attempted > 0);
        assert_eq!(hist.replace.attempted, hist.replace.accepted + hist.replace.rejected);
    }
    assert_eq!(teacher.fingerprint(), before);
}

#[test]
fn divergence_is_reported() {
    let (ds, model) = toy_problem(12);
    let spec = MethodSpec::new(Method::Ib, GaiConfig::with_minority(2));
    let sched = TrainSchedule {
        base_lr: 1e300,
        warmup: 0,
        ..short_schedule(30)
    };
    match train(&model, &ds, &sched, &spec, &mut SeededRng::new(5)) {
        Err(crate::Error::Diverged { iteration, detail, .. }) => {
            assert!(iteration < 30);
            assert!(detail.contains("batch class counts"));
        }
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn mixup_training_runs_with_soft_targets() {
    let (ds, model) = toy_problem(13);
    let spec = MethodSpec::new(
        Method::Mixup,
        GaiConfig {
            replace_prob: 1.0,
            ..GaiConfig::with_minority(2)
        },
    );
    let (m, hist) = train(&model, &ds, &short_schedule(10), &spec, &mut SeededRng::new(6)).unwrap();
    assert!(hist.replace.accepted > 0);
    assert!(m.params().iter().all(Tensor::is_finite));
}

proptest::proptest! {
    #[test]
    fn scaled_schedules_are_valid(n in 0usize..5000) {
        let s = TrainSchedule::scaled(n, 0.01);
        proptest::prop_assert!(s.validate().is_ok(), "{:?}", s);
        for t in 0..n.min(50) {
            proptest::prop_assert!(s.lr(t) > 0.0 && s.lr(t) <= 0.01);
        }
    }

    #[test]
    fn class_balanced_counts_stay_in_bound(seed in 0u64..1000, k in 2usize..6) {
        let sizes: Vec<usize> = (0..k).map(|c| 1 + 37 * c).collect();
        let ds = sized_dataset(&sizes);
        let n = 4000;
        let c = class_freq(&ds, SamplerSpec::class_balanced(), n, seed);
        let p = 1.0 / k as f64;
        for &x in &c {
            proptest::prop_assert!(within(x, n, p, 4.0), "{:?}", c);
        }
    }
}
