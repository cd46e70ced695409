use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::arch::{ArchSpec, LayerKind, KERNEL, PAD, STRIDE};
use super::loss::{cross_entropy_row, softmax, ScalarLoss, Target};
use crate::error::{ensure, Error, Result};
use crate::numcore::{SeededRng, Tensor};

/// Samples per gradient chunk. Chunks are reduced in index order so the
/// result does not depend on how many threads evaluated them.
const GRAD_CHUNK: usize = 8;

/// Multi-class conv classifier with analytic gradients.
///
/// Parameters are stored per layer as `[weight, bias]` pairs, in layer order.
/// Conv weights are `[out_c, 3, 3, in_c]`; dense weights are `[out, in]`.
/// Images are `[H, W, D]` row-major (channels last).
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    arch: ArchSpec,
    layers: Vec<LayerKind>,
    params: Vec<Tensor>,
}

/// Gradients aligned with [`Classifier::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-sample activations kept for the backward pass.
pub(crate) struct Trace {
    /// Input to each layer, flattened. Conv layers store their im2col patch
    /// matrix instead (`positions x 9*in_c`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer; the last entry is the logits.
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn logits(&self) -> &[f64] {
        self.pre.last().unwrap()
    }

    /// Smallest |pre-activation| over all ReLU units.
    pub(crate) fn min_relu_margin(&self) -> f64 {
        let n = self.pre.len();
        self.pre[..n - 1]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        let n = self.pre.len();
        self.pre[..n - 1].iter().flatten().map(|&v| v > 0.0).collect()
    }
}

fn im2col(x: &[f64], in_h: usize, in_w: usize, in_c: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let k = KERNEL * KERNEL * in_c;
    let mut cols = vec![0.0; out_h * out_w * k];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let row = &mut cols[(oy * out_w + ox) * k..(oy * out_w + ox + 1) * k];
            for ky in 0..KERNEL {
                let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                if iy < 0 || iy >= in_h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                    if ix < 0 || ix >= in_w as isize {
                        continue;
                    }
                    let src = (iy as usize * in_w + ix as usize) * in_c;
                    let dst = (ky * KERNEL + kx) * in_c;
                    row[dst..dst + in_c].copy_from_slice(&x[src..src + in_c]);
                }
            }
        }
    }
    cols
}

fn col2im_add(
    dcols: &[f64],
    dx: &mut [f64],
    in_h: usize,
    in_w: usize,
    in_c: usize,
    out_h: usize,
    out_w: usize,
) {
    let k = KERNEL * KERNEL * in_c;
    for oy in 0..out_h {
        for ox in 0..out_w {
            let row = &dcols[(oy * out_w + ox) * k..(oy * out_w + ox + 1) * k];
            for ky in 0..KERNEL {
                let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                if iy < 0 || iy >= in_h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                    if ix < 0 || ix >= in_w as isize {
                        continue;
                    }
                    let dst = (iy as usize * in_w + ix as usize) * in_c;
                    let src = (ky * KERNEL + kx) * in_c;
                    for c in 0..in_c {
                        dx[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Classifier {
    /// Fan-in scaled uniform initialization: `sqrt(6 / fan_in)` bound for
    /// layers feeding a ReLU, `1 / sqrt(fan_in)` for the output layer. Biases
    /// start at zero.
    pub fn new(arch: ArchSpec, rng: &mut SeededRng) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let n_layers = model.layers.len();
        for (i, layer) in model.layers.iter().enumerate() {
            let fan_in = layer.fan_in() as f64;
            let bound = if i + 1 == n_layers {
                1.0 / fan_in.sqrt()
            } else {
                (6.0 / fan_in).sqrt()
            };
            for w in model.params[2 * i].data_mut() {
                *w = rng.uniform_range(-bound, bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers();
        let params = layers
            .iter()
            .flat_map(|l| [Tensor::zeros(&l.weight_shape()), Tensor::zeros(&[l.bias_len()])])
            .collect();
        Ok(Self {
            arch,
            layers,
            params,
        })
    }

    pub fn from_params(arch: ArchSpec, params: Vec<Tensor>) -> Result<Self> {
        let template = Self::zeros(arch)?;
        ensure(params.len() == template.params.len(), || {
            format!(
                "expected {} parameter tensors, got {}",
                template.params.len(),
                params.len()
            )
        })?;
        for (want, got) in template.params.iter().zip(&params) {
            want.same_shape(got)?;
            ensure(got.is_finite(), || "non-finite parameter".into())?;
        }
        Ok(Self { params, ..template })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.classes
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// SHA-256 over the parameter bit patterns, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = self.arch.input_shape();
        if x.shape() == want {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: x.shape().to_vec(),
                right: want.to_vec(),
            })
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let want = self.arch.input_shape();
        if batch.rank() == 4 && batch.shape()[1..] == want {
            Ok(batch.shape()[0])
        } else {
            let mut right = vec![0];
            right.extend(want);
            Err(Error::ShapeMismatch {
                left: batch.shape().to_vec(),
                right,
            })
        }
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.arch.input_len());
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut act: Vec<f64> = x.iter().map(|v| v - self.arch.input_mean).collect();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = self.params[2 * i].data();
            let b = self.params[2 * i + 1].data();
            let (input, z) = match *layer {
                LayerKind::Conv {
                    in_h,
                    in_w,
                    in_c,
                    out_h,
                    out_w,
                    out_c,
                } => {
                    let cols = im2col(&act, in_h, in_w, in_c, out_h, out_w);
                    let k = KERNEL * KERNEL * in_c;
                    let mut z = Vec::with_capacity(out_h * out_w * out_c);
                    for patch in cols.chunks_exact(k) {
                        for oc in 0..out_c {
                            z.push(b[oc] + dot(&w[oc * k..(oc + 1) * k], patch));
                        }
                    }
                    (cols, z)
                }
                LayerKind::Dense { inputs, outputs } => {
                    let z = (0..outputs)
                        .map(|o| b[o] + dot(&w[o * inputs..(o + 1) * inputs], &act))
                        .collect();
                    (act, z)
                }
            };
            if i + 1 < n {
                act = z.iter().map(|&v| v.max(0.0)).collect();
            } else {
                act = Vec::new();
            }
            inputs.push(input);
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    /// Back-propagates `dlogits` through a trace. Accumulates parameter
    /// gradients into `dparams` when given; returns the input gradient when
    /// `want_input` is set.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        dlogits: &[f64],
        mut dparams: Option<&mut [Vec<f64>]>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let n = self.layers.len();
        let mut dz = dlogits.to_vec();
        for i in (0..n).rev() {
            let layer = self.layers[i];
            let w = self.params[2 * i].data();
            let input = &trace.inputs[i];
            let need_dx = i > 0 || want_input;
            let dx = match layer {
                LayerKind::Dense { inputs, outputs } => {
                    if let Some(dp) = dparams.as_deref_mut() {
                        let (dw, rest) = dp[2 * i..].split_at_mut(1);
                        let (dw, db) = (&mut dw[0], &mut rest[0]);
                        for o in 0..outputs {
                            let g = dz[o];
                            if g == 0.0 {
                                continue;
                            }
                            db[o] += g;
                            let row = &mut dw[o * inputs..(o + 1) * inputs];
                            for (r, &a) in row.iter_mut().zip(input.iter()) {
                                *r += g * a;
                            }
                        }
                    }
                    if need_dx {
                        let mut dx = vec![0.0; inputs];
                        for o in 0..outputs {
                            let g = dz[o];
                            if g == 0.0 {
                                continue;
                            }
                            for (d, &wv) in dx.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                                *d += g * wv;
                            }
                        }
                        Some(dx)
                    } else {
                        None
                    }
                }
                LayerKind::Conv {
                    in_h,
                    in_w,
                    in_c,
                    out_h,
                    out_w,
                    out_c,
                } => {
                    let k = KERNEL * KERNEL * in_c;
                    if let Some(dp) = dparams.as_deref_mut() {
                        let (dw, rest) = dp[2 * i..].split_at_mut(1);
                        let (dw, db) = (&mut dw[0], &mut rest[0]);
                        for (pos, patch) in input.chunks_exact(k).enumerate() {
                            for oc in 0..out_c {
                                let g = dz[pos * out_c + oc];
                                if g == 0.0 {
                                    continue;
                                }
                                db[oc] += g;
                                for (r, &a) in dw[oc * k..(oc + 1) * k].iter_mut().zip(patch) {
                                    *r += g * a;
                                }
                            }
                        }
                    }
                    if need_dx {
                        let mut dcols = vec![0.0; out_h * out_w * k];
                        for (pos, drow) in dcols.chunks_exact_mut(k).enumerate() {
                            for oc in 0..out_c {
                                let g = dz[pos * out_c + oc];
                                if g == 0.0 {
                                    continue;
                                }
                                for (d, &wv) in drow.iter_mut().zip(&w[oc * k..(oc + 1) * k]) {
                                    *d += g * wv;
                                }
                            }
                        }
                        let mut dx = vec![0.0; in_h * in_w * in_c];
                        col2im_add(&dcols, &mut dx, in_h, in_w, in_c, out_h, out_w);
                        Some(dx)
                    } else {
                        None
                    }
                }
            };
            match dx {
                Some(dx) if i > 0 => {
                    // ReLU of the previous layer; subgradient 0 at the kink.
                    let prev = &trace.pre[i - 1];
                    dz = dx
                        .iter()
                        .zip(prev)
                        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                        .collect();
                }
                Some(dx) => return Some(dx),
                None => return None,
            }
        }
        None
    }

    /// Logits of one `[H, W, D]` image given as a flat slice.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).pre.pop().unwrap()
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let b = self.check_batch(batch)?;
        let k = self.arch.classes;
        let rows: Vec<Vec<f64>> = (0..b)
            .into_par_iter()
            .map(|i| self.logits(batch.row(i)))
            .collect();
        let out = Tensor::from_parts(vec![b, k], rows.concat());
        ensure(out.is_finite(), || "non-finite logits".into())?;
        Ok(out)
    }

    /// Class probabilities for a list of images.
    pub fn predict_proba(&self, images: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
        for x in images {
            self.check_input(x)?;
        }
        Ok(images
            .par_iter()
            .map(|x| softmax(&self.logits(x.data())))
            .collect())
    }

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Mean cross-entropy and its parameter gradient over `images`.
    pub fn loss_and_grad(&self, images: &[&Tensor], targets: &[Target]) -> Result<(f64, Gradients)> {
        ensure(!images.is_empty(), || "empty batch".into())?;
        ensure(images.len() == targets.len(), || {
            format!("{} images but {} targets", images.len(), targets.len())
        })?;
        for (x, t) in images.iter().zip(targets) {
            self.check_input(x)?;
            t.validate(self.arch.classes)?;
        }
        let n = images.len();
        let chunks: Vec<(f64, Vec<Vec<f64>>)> = (0..n.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = self.zero_grads();
                let mut loss = 0.0;
                for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n) {
                    let tr = self.trace(images[i].data());
                    let (l, dlogits) = cross_entropy_row(tr.logits(), &targets[i]);
                    loss += l;
                    self.backward(&tr, &dlogits, Some(&mut acc), false);
                }
                (loss, acc)
            })
            .collect();
        let mut total = 0.0;
        let mut acc = self.zero_grads();
        for (l, g) in chunks {
            total += l;
            for (a, b) in acc.iter_mut().zip(g) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
        let scale = 1.0 / n as f64;
        let grads = self
            .params
            .iter()
            .zip(acc)
            .map(|(p, g)| Tensor::from_parts(p.shape().to_vec(), g.into_iter().map(|v| v * scale).collect()))
            .collect();
        Ok((total * scale, Gradients(grads)))
    }

    /// Gradient of mean cross-entropy with respect to every parameter tensor.
    pub fn grad_params(&self, batch: &Tensor, labels: &[usize]) -> Result<Gradients> {
        let b = self.check_batch(batch)?;
        ensure(labels.len() == b, || {
            format!("{} labels for a batch of {b}", labels.len())
        })?;
        let images: Vec<Tensor> = (0..b).map(|i| batch.select(i)).collect();
        let refs: Vec<&Tensor> = images.iter().collect();
        let targets: Vec<Target> = labels.iter().map(|&y| Target::Class(y)).collect();
        self.loss_and_grad(&refs, &targets).map(|(_, g)| g)
    }

    /// Value of `loss` at `x` and its gradient with respect to `x`.
    pub fn grad_input(&self, loss: ScalarLoss, x: &Tensor) -> Result<(f64, Tensor)> {
        self.check_input(x)?;
        ensure(loss.class() < self.arch.classes, || {
            format!("class {} out of range", loss.class())
        })?;
        let tr = self.trace(x.data());
        let (value, dlogits) = loss.value_and_grad(tr.logits());
        let dx = self.backward(&tr, &dlogits, None, true).expect("input gradient requested");
        Ok((value, Tensor::from_parts(x.shape().to_vec(), dx)))
    }

    /// On/off state of every ReLU unit at `x`, in layer order.
    pub fn relu_pattern(&self, x: &Tensor) -> Result<Vec<bool>> {
        self.check_input(x)?;
        Ok(self.trace(x.data()).relu_pattern())
    }

    /// Smallest distance of any ReLU pre-activation from its kink at `x`.
    pub fn relu_margin(&self, x: &Tensor) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.trace(x.data()).min_relu_margin())
    }

    /// Value of `loss` at `x` (no gradient).
    pub fn scalar_loss(&self, loss: ScalarLoss, x: &Tensor) -> Result<f64> {
        self.check_input(x)?;
        Ok(loss.value_and_grad(&self.logits(x.data())).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> ArchSpec {
        ArchSpec {
            height: 6,
            width: 5,
            channels: 2,
            conv_channels: vec![3, 4],
            hidden: vec![5],
            classes: 4,
            input_mean: 0.5,
        }
    }

    fn random_image(shape: [usize; 3], rng: &mut SeededRng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn zero_model_gives_uniform_softmax() {
        let m = Classifier::zeros(ArchSpec::reference(16, 16, 3, 5)).unwrap();
        let mut rng = SeededRng::new(1);
        let x = random_image([16, 16, 3], &mut rng);
        let batch = Tensor::stack(&[&x]).unwrap();
        let logits = m.forward(&batch).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let p = softmax(logits.row(0));
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn duplicated_rows_and_determinism() {
        let mut rng = SeededRng::new(2);
        let m = Classifier::new(small_arch(), &mut rng).unwrap();
        let x = random_image([6, 5, 2], &mut rng);
        let y = random_image([6, 5, 2], &mut rng);
        let batch = Tensor::stack(&[&x, &y, &x]).unwrap();
        let a = m.forward(&batch).unwrap();
        assert_eq!(a.row(0), a.row(2));
        let m2 = Classifier::new(small_arch(), &mut SeededRng::new(2)).unwrap();
        assert!(m2.forward(&batch).unwrap().bitwise_eq(&a));
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let m = Classifier::zeros(small_arch()).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 5, 6, 2])).is_err());
        assert!(m.grad_input(ScalarLoss::Logit(0), &Tensor::zeros(&[6, 5, 3])).is_err());
    }

    #[test]
    fn linear_model_logit_gradient_is_weight_map() {
        let arch = ArchSpec::linear(3, 4, 2, 3);
        let mut rng = SeededRng::new(4);
        let m = Classifier::new(arch, &mut rng).unwrap();
        let x = random_image([3, 4, 2], &mut rng);
        let (_, g) = m.grad_input(ScalarLoss::Logit(1), &x).unwrap();
        let w = m.params()[0].data();
        assert_eq!(g.data(), &w[24..48]);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        // Hidden biases strongly negative: every hidden unit is dead.
        let arch = ArchSpec {
            conv_channels: vec![],
            hidden: vec![4],
            ..ArchSpec::linear(2, 2, 1, 2)
        };
        let mut rng = SeededRng::new(5);
        let mut m = Classifier::new(arch, &mut rng).unwrap();
        m.params_mut()[1] = Tensor::full(&[4], -100.0);
        let x = random_image([2, 2, 1], &mut rng);
        let (_, g) = m.grad_input(ScalarLoss::CrossEntropy(0), &x).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        let grads = m.grad_params(&Tensor::stack(&[&x]).unwrap(), &[1]).unwrap();
        assert!(grads.0[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let mut rng = SeededRng::new(6);
        let m = Classifier::new(small_arch(), &mut rng).unwrap();
        let xs: Vec<Tensor> = (0..3).map(|_| random_image([6, 5, 2], &mut rng)).collect();
        let one = Tensor::stack(&[&xs[0], &xs[1], &xs[2]]).unwrap();
        let two = Tensor::stack(&[&xs[0], &xs[1], &xs[2], &xs[0], &xs[1], &xs[2]]).unwrap();
        let g1 = m.grad_params(&one, &[0, 3, 1]).unwrap();
        let g2 = m.grad_params(&two, &[0, 3, 1, 0, 3, 1]).unwrap();
        for (a, b) in g1.0.iter().zip(&g2.0) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn fitted_single_sample_is_stationary() {
        let arch = small_arch();
        let mut rng = SeededRng::new(8);
        let mut m = Classifier::new(arch, &mut rng).unwrap();
        // Saturate the output bias towards the label so softmax is one-hot.
        let last = m.params().len() - 1;
        m.params_mut()[last] = Tensor::new(vec![4], vec![0.0, 0.0, 80.0, 0.0]).unwrap();
        let x = random_image([6, 5, 2], &mut rng);
        let g = m.grad_params(&Tensor::stack(&[&x]).unwrap(), &[2]).unwrap();
        assert!(g.norm() < 1e-8, "{}", g.norm());
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let mut rng = SeededRng::new(9);
        let mut m = Classifier::new(small_arch(), &mut rng).unwrap();
        let before = m.fingerprint();
        assert_eq!(before, m.clone().fingerprint());
        m.params_mut()[0].data_mut()[0] += 1e-12;
        assert_ne!(before, m.fingerprint());
    }
}
