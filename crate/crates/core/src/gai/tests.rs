use super::*;
use crate::diffnet::{ArchSpec, Classifier, ScalarLoss, Target};
use crate::numcore::{SeededRng, Tensor};
use crate::LabeledSample;

fn rand_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform()).collect()).unwrap()
}

fn nets(shape: [usize; 3], classes: usize, seed: u64) -> (Classifier, Classifier) {
    let mut rng = SeededRng::new(seed);
    let arch = ArchSpec::reference(shape[0], shape[1], shape[2], classes);
    (
        Classifier::new(arch.clone(), &mut rng).unwrap(),
        Classifier::new(arch, &mut rng).unwrap(),
    )
}

fn softmax_manual(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn zero_steps_reproduce_initial_interpolation() {
    let (g, f) = nets([6, 6, 3], 4, 1);
    let mut rng = SeededRng::new(2);
    let xa = rand_tensor(&[6, 6, 3], &mut rng);
    let xb = rand_tensor(&[6, 6, 3], &mut rng);
    let cfg = GaiConfig {
        steps: 0,
        noise_scale: 0.0,
        ..GaiConfig::with_minority(3)
    };
    let out = gai_generate(&xa, &xb, 1, &cfg, &g, &f, &mut rng).unwrap();
    let x0 = interpolate(&Tensor::full(&[6, 6, 3], 0.75), &xa, &xb).unwrap();
    assert!(out.sample.bitwise_eq(&x0));
    let (fixed, target) = fixed_interp_generate(&xa, &xb, 0.75, false, 1, 3, 4).unwrap();
    assert!(out.sample.bitwise_eq(&fixed));
    assert_eq!(target, Target::Class(3));
}

#[test]
fn alpha_stays_in_unit_interval_and_replays_exactly() {
    let (g, f) = nets([8, 8, 3], 5, 3);
    let mut rng = SeededRng::new(4);
    let xa = rand_tensor(&[8, 8, 3], &mut rng);
    let xb = rand_tensor(&[8, 8, 3], &mut rng);
    let cfg = GaiConfig {
        steps: 25,
        step_size: 2.0,
        ..GaiConfig::with_minority(4)
    };
    let (out, trace) = gai_generate_traced(&xa, &xb, 0, &cfg, &g, &f, &mut rng).unwrap();
    assert_eq!(trace.len(), 25);
    for s in &trace {
        assert!(s.after.min() >= 0.0 && s.after.max() <= 1.0);
        let n = crate::numcore::l2_norm(&s.gradient);
        let replay = crate::numcore::clamp01(&s.before.sub(&s.gradient.scale(cfg.step_size).map(|v| v / n)).unwrap());
        assert!(replay.bitwise_eq(&s.after));
    }
    assert!(trace.last().unwrap().after.bitwise_eq(&out.coefficients));
    assert!(out.sample.bitwise_eq(&interpolate(&out.coefficients, &xa, &xb).unwrap()));
}

#[test]
fn acceptance_implies_confidence() {
    let (g, f) = nets([6, 6, 3], 4, 5);
    let mut rng = SeededRng::new(6);
    for tau in [0.0, 0.2, 0.3, 0.5, 0.9] {
        let cfg = GaiConfig {
            reject_threshold: tau,
            ..GaiConfig::with_minority(3)
        };
        let xa = rand_tensor(&[6, 6, 3], &mut rng);
        let xb = rand_tensor(&[6, 6, 3], &mut rng);
        let out = gai_generate(&xa, &xb, 2, &cfg, &g, &f, &mut rng).unwrap();
        assert_eq!(out.accepted, out.teacher_confidence >= tau);
        let conf = crate::diffnet::softmax(&g.logits(out.sample.data()))[3];
        assert_eq!(conf, out.teacher_confidence);
    }
}

/// One normalized step on a single pixel: the direction is the sign of the
/// scalar derivative, derived here by hand for linear teacher and student.
#[test]
fn one_pixel_linear_step_matches_closed_form() {
    let arch = ArchSpec::linear(1, 1, 1, 3);
    let g = Classifier::from_params(
        arch.clone(),
        vec![
            Tensor::new(vec![3, 1], vec![0.4, -1.2, 2.0]).unwrap(),
            Tensor::new(vec![3], vec![0.1, 0.0, -0.3]).unwrap(),
        ],
    )
    .unwrap();
    let f = Classifier::from_params(
        arch,
        vec![
            Tensor::new(vec![3, 1], vec![1.5, 0.2, -0.7]).unwrap(),
            Tensor::new(vec![3], vec![0.0, 0.2, 0.0]).unwrap(),
        ],
    )
    .unwrap();
    let (major, minor, a0, eta, lambda) = (0.8, 0.3, 0.75, 0.1, 0.5);
    let cfg = GaiConfig {
        steps: 1,
        step_size: eta,
        restrain_weight: lambda,
        noise_scale: 0.0,
        alpha_init: a0,
        ..GaiConfig::with_minority(2)
    };
    let source = 0;

    let x = a0 * major + (1.0 - a0) * minor;
    let wg = [0.4, -1.2, 2.0];
    let bg = [0.1, 0.0, -0.3];
    let wf = [1.5, 0.2, -0.7];
    let bf = [0.0, 0.2, 0.0];
    let pg = softmax_manual(&[wg[0] * x + bg[0], wg[1] * x + bg[1], wg[2] * x + bg[2]]);
    let pf = softmax_manual(&[wf[0] * x + bf[0], wf[1] * x + bf[1], wf[2] * x + bf[2]]);
    let dce_dx: f64 = (0..3).map(|k| (pg[k] - f64::from(u8::from(k == 2))) * wg[k]).sum();
    let mean_wf: f64 = (0..3).map(|k| pf[k] * wf[k]).sum();
    let dp_dx = pf[source] * (wf[source] - mean_wf);
    let xi = (dce_dx + lambda * dp_dx) * (major - minor);
    let a1 = (a0 - eta * xi / xi.abs()).clamp(0.0, 1.0);
    let expected = a1 * major + (1.0 - a1) * minor;

    let t = |v: f64| Tensor::new(vec![1, 1, 1], vec![v]).unwrap();
    let mut rng = SeededRng::new(0);
    let out = gai_generate(&t(major), &t(minor), source, &cfg, &g, &f, &mut rng).unwrap();
    assert!((out.sample.data()[0] - expected).abs() < 1e-10);
    assert!((out.coefficients.data()[0] - a1).abs() < 1e-10);

    // Additive variant: x_adv = major - eta * sign(dL/dx) at x = major.
    let pg = softmax_manual(&[wg[0] * major + bg[0], wg[1] * major + bg[1], wg[2] * major + bg[2]]);
    let pf = softmax_manual(&[wf[0] * major + bf[0], wf[1] * major + bf[1], wf[2] * major + bf[2]]);
    let dce: f64 = (0..3).map(|k| (pg[k] - f64::from(u8::from(k == 2))) * wg[k]).sum();
    let mean_wf: f64 = (0..3).map(|k| pf[k] * wf[k]).sum();
    let d = dce + lambda * pf[source] * (wf[source] - mean_wf);
    let expected = major - eta * d / d.abs();
    let out = gai_minus_generate(&t(major), source, &cfg, &g, &f, &mut rng).unwrap();
    assert!((out.sample.data()[0] - expected).abs() < 1e-10);
}

#[test]
fn alpha_gradient_matches_finite_differences() {
    let (g, f) = nets([6, 6, 3], 4, 7);
    let mut rng = SeededRng::new(8);
    let xa = rand_tensor(&[6, 6, 3], &mut rng);
    let xb = rand_tensor(&[6, 6, 3], &mut rng);
    let alpha = rand_tensor(&[6, 6, 3], &mut rng).map(|v| 0.1 + 0.8 * v);
    let cfg = GaiConfig::with_minority(3);
    let grad = objective_grad_alpha(&alpha, &xa, &xb, &cfg, &g, &f, 1).unwrap();
    let value = |a: &Tensor| {
        let x = interpolate(a, &xa, &xb).unwrap();
        objective(&x, &cfg, &g, &f, a, 1).unwrap()
    };
    let pattern = |a: &Tensor| {
        let x = interpolate(a, &xa, &xb).unwrap();
        (g.relu_pattern(&x).unwrap(), f.relu_pattern(&x).unwrap())
    };
    let base = pattern(&alpha);
    let h = 1e-5;
    let mut checked = 0;
    for _ in 0..50 {
        let i = rng.below(alpha.len());
        let mut p = alpha.clone();
        let mut m = alpha.clone();
        p.data_mut()[i] += h;
        m.data_mut()[i] -= h;
        if pattern(&p) != base || pattern(&m) != base {
            continue;
        }
        let fd = (value(&p) - value(&m)) / (2.0 * h);
        let an = grad.data()[i];
        let err = (fd - an).abs();
        assert!(err <= 1e-8 || err <= 1e-4 * fd.abs().max(an.abs()), "i={i} fd={fd} an={an}");
        checked += 1;
    }
    assert!(checked >= 45);
}

#[test]
fn objective_matches_term_by_term_reimplementation() {
    let (g, f) = nets([5, 4, 2], 4, 9);
    let mut rng = SeededRng::new(10);
    let x = rand_tensor(&[5, 4, 2], &mut rng);
    let alpha = rand_tensor(&[5, 4, 2], &mut rng);
    let cfg = GaiConfig {
        restrain_weight: 0.7,
        smooth_weight: 3.0,
        ..GaiConfig::with_minority(3)
    };
    let got = objective(&x, &cfg, &g, &f, &alpha, 2).unwrap();

    let zg = g.logits(x.data());
    let cls = -softmax_manual(&zg)[3].ln();
    let restrain = softmax_manual(&f.logits(x.data()))[2];
    let a = |y: usize, x: usize, c: usize| alpha.data()[(y * 4 + x) * 2 + c];
    let (mut v, mut hz) = (0.0, 0.0);
    for y in 0..5 {
        for xx in 0..4 {
            for c in 0..2 {
                if y + 1 < 5 {
                    v += (a(y + 1, xx, c) - a(y, xx, c)).powi(2);
                }
                if xx + 1 < 4 {
                    hz += (a(y, xx + 1, c) - a(y, xx, c)).powi(2);
                }
            }
        }
    }
    let smooth = v / (4.0 * 4.0) + hz / (5.0 * 3.0);
    let want = cls + 0.7 * restrain + 3.0 * smooth;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn logit_restrain_mode_reads_raw_logit() {
    let (g, f) = nets([4, 4, 1], 3, 11);
    let mut rng = SeededRng::new(12);
    let x = rand_tensor(&[4, 4, 1], &mut rng);
    let cfg = GaiConfig {
        restrain: RestrainMode::Logit,
        ..GaiConfig::with_minority(2)
    };
    let terms = objective_terms(&x, &cfg, &g, &f, &x, 0).unwrap();
    assert_eq!(terms.restrain, f.logits(x.data())[0]);
    assert_eq!(terms.restrain, f.scalar_loss(ScalarLoss::Logit(0), &x).unwrap());
}

#[test]
fn perturbation_variant_bounds_and_identity() {
    let (g, f) = nets([6, 6, 3], 4, 13);
    let mut rng = SeededRng::new(14);
    let xa = rand_tensor(&[6, 6, 3], &mut rng);
    let cfg0 = GaiConfig {
        steps: 0,
        ..GaiConfig::with_minority(3)
    };
    let out = gai_minus_generate(&xa, 1, &cfg0, &g, &f, &mut rng).unwrap();
    assert!(out.sample.bitwise_eq(&xa));
    let cfg = GaiConfig {
        steps: 7,
        step_size: 0.3,
        ..GaiConfig::with_minority(3)
    };
    let out = gai_minus_generate(&xa, 1, &cfg, &g, &f, &mut rng).unwrap();
    let delta = out.sample.sub(&xa).unwrap();
    assert!(delta.max_abs() <= 0.3 * 7.0 + 1e-12);
    assert!(delta.max_abs() > 0.0);
}

#[test]
fn fixed_interp_labels() {
    let a = Tensor::ones(&[2, 2, 1]);
    let b = Tensor::zeros(&[2, 2, 1]);
    let (img, t) = fixed_interp_generate(&a, &b, 0.75, false, 1, 4, 5).unwrap();
    assert_eq!(t, Target::Class(4));
    assert!(img.data().iter().all(|&v| v == 0.75));
    let (img, t) = fixed_interp_generate(&a, &b, 1.0, true, 1, 4, 5).unwrap();
    assert_eq!(t, Target::Dist(vec![0.0, 1.0, 0.0, 0.0, 0.0]));
    assert!(img.bitwise_eq(&a));
    let (img, _) = fixed_interp_generate(&a, &b, 0.0, true, 1, 4, 5).unwrap();
    assert!(img.bitwise_eq(&b));
    let (_, t) = fixed_interp_generate(&a, &b, 0.75, true, 1, 4, 5).unwrap();
    assert_eq!(t, Target::Dist(vec![0.0, 0.75, 0.0, 0.0, 0.25]));
    assert!(fixed_interp_generate(&a, &b, 1.2, true, 1, 4, 5).is_err());
}

fn pools(rng: &mut SeededRng, shape: [usize; 3], minority: usize) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    let minor = (0..6)
        .map(|i| LabeledSample::new(rand_tensor(&shape, rng), minority, 100 + i))
        .collect();
    let major = (0..10)
        .map(|i| LabeledSample::new(rand_tensor(&shape, rng), (i % minority as u64) as usize, i))
        .collect();
    (minor, major)
}

#[test]
fn replace_batch_degenerate_cases() {
    let (g, f) = nets([6, 6, 3], 4, 15);
    let mut rng = SeededRng::new(16);
    let (minor, major) = pools(&mut rng, [6, 6, 3], 3);
    let pool: Vec<&LabeledSample> = major.iter().collect();

    let cfg = GaiConfig {
        replace_prob: 0.0,
        ..GaiConfig::with_minority(3)
    };
    let out = replace_batch(&minor, &pool, &cfg, &g, &f, &mut rng).unwrap();
    assert_eq!(out, minor);

    // A zero teacher is never more than 1/K confident, so tau = 1 rejects all.
    let flat = Classifier::zeros(g.arch().clone()).unwrap();
    let cfg = GaiConfig {
        replace_prob: 1.0,
        reject_threshold: 1.0,
        ..GaiConfig::with_minority(3)
    };
    let out = replace_batch(&minor, &pool, &cfg, &flat, &f, &mut rng).unwrap();
    assert_eq!(out, minor);

    let cfg = GaiConfig {
        replace_prob: 1.0,
        reject_threshold: 0.0,
        ..GaiConfig::with_minority(3)
    };
    let out = replace_batch(&minor, &pool, &cfg, &g, &f, &mut rng).unwrap();
    for (a, b) in out.iter().zip(&minor) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.id, b.id);
        assert!(!a.image.bitwise_eq(&b.image));
    }
}

#[test]
fn replace_batch_contracts() {
    let (g, f) = nets([4, 4, 1], 3, 17);
    let mut rng = SeededRng::new(18);
    let (minor, major) = pools(&mut rng, [4, 4, 1], 2);
    let cfg = GaiConfig::with_minority(2);
    assert!(replace_batch(&minor, &[], &cfg, &g, &f, &mut rng).is_err());
    let wrong = GaiConfig::with_minority(1);
    let pool: Vec<&LabeledSample> = major.iter().collect();
    assert!(replace_batch(&minor, &pool, &wrong, &g, &f, &mut rng).is_err());
}

#[test]
fn replacement_is_reproducible_and_sound() {
    let (g, f) = nets([6, 6, 3], 4, 19);
    let mut r0 = SeededRng::new(20);
    let (minor, major) = pools(&mut r0, [6, 6, 3], 3);
    let pool: Vec<&LabeledSample> = major.iter().collect();
    let refs: Vec<&LabeledSample> = minor.iter().collect();
    let cfg = GaiConfig {
        reject_threshold: 0.3,
        ..GaiConfig::with_minority(3)
    };
    let guides = Guides {
        teacher: Some(&g),
        student: &f,
    };
    let (a, stats) = augment_minority(Variant::Gai, &refs, &pool, &cfg, guides, &mut SeededRng::new(1)).unwrap();
    let (b, _) = augment_minority(Variant::Gai, &refs, &pool, &cfg, guides, &mut SeededRng::new(1)).unwrap();
    assert_eq!(stats.attempted, stats.accepted + stats.rejected);
    for (x, y) in a.iter().zip(&b) {
        assert!(x.image.bitwise_eq(&y.image));
        if x.replaced {
            let conf = crate::diffnet::softmax(&g.logits(x.image.data()))[3];
            assert!(conf >= 0.3);
        }
        assert_eq!(x.target, Target::Class(3));
    }

    let (m, _) = augment_minority(
        Variant::Mixup,
        &refs,
        &pool,
        &GaiConfig {
            replace_prob: 1.0,
            ..cfg.clone()
        },
        Guides {
            teacher: None,
            student: &f,
        },
        &mut SeededRng::new(2),
    )
    .unwrap();
    for s in &m {
        match &s.target {
            Target::Dist(d) => {
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(d.iter().all(|&v| v >= 0.0));
            }
            Target::Class(_) => panic!("mixup must produce soft targets"),
        }
    }
    assert!(augment_minority(
        Variant::Gai,
        &refs,
        &pool,
        &cfg,
        Guides {
            teacher: None,
            student: &f
        },
        &mut SeededRng::new(3)
    )
    .is_err());
}

#[test]
fn zero_gradient_steps_are_skipped() {
    // Identical endpoints make the interpolation Jacobian vanish; with no
    // smoothness weight and constant alpha the gradient is exactly zero.
    let (g, f) = nets([4, 4, 1], 3, 21);
    let mut rng = SeededRng::new(22);
    let x = rand_tensor(&[4, 4, 1], &mut rng);
    let cfg = GaiConfig {
        noise_scale: 0.0,
        smooth_weight: 0.0,
        steps: 4,
        ..GaiConfig::with_minority(2)
    };
    let out = gai_generate(&x, &x, 0, &cfg, &g, &f, &mut rng).unwrap();
    assert_eq!(out.skipped_steps, 4);
    assert!(out.coefficients.data().iter().all(|&a| a == 0.75));
}
