use std::fmt;

use crate::error::{ensure, Error, Result};

/// Dense row-major `f64` array.
///
/// `data.len()` always equals the product of the extents. Tensors are plain
/// values: operations return new tensors and never alias their inputs.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl ElementwiseOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        ensure(shape.iter().all(|&e| e > 0), || {
            format!("tensor extents must be positive, got {shape:?}")
        })?;
        let n: usize = shape.iter().product();
        ensure(n == data.len(), || {
            format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                n
            )
        })?;
        Ok(Self { shape, data })
    }

    /// Builds a tensor the caller knows is consistent. Panics otherwise.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    /// Rank-1 tensor. Panics on empty input.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector needs at least one element");
        Self::from_parts(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElementwiseOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElementwiseOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElementwiseOp::Mul, self, other)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Borrow the `i`-th slice along the leading axis.
    pub fn row(&self, i: usize) -> &[f64] {
        let stride: usize = self.shape[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Copy the `i`-th leading-axis slice out as a tensor of rank `r - 1`.
    pub fn select(&self, i: usize) -> Tensor {
        let shape = if self.shape.len() > 1 {
            self.shape[1..].to_vec()
        } else {
            vec![1]
        };
        Self::from_parts(shape, self.row(i).to_vec())
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        ensure(!items.is_empty(), || "cannot stack zero tensors".into())?;
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for t in items {
            items[0].same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Ok(Self::from_parts(shape, data))
    }

    /// Bitwise equality, treating `0.0` and `-0.0` as different.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(
                f,
                "Tensor{:?}[{}, {}, .. ({} elements)]",
                self.shape,
                self.data[0],
                self.data[1],
                self.data.len()
            )
        }
    }
}

/// Exact-shape elementwise arithmetic. No broadcasting.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_shape(b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| op.apply(x, y))
        .collect();
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

pub fn clamp01(a: &Tensor) -> Tensor {
    a.map(|v| v.clamp(0.0, 1.0))
}

/// Euclidean norm over all elements, accumulated in storage order.
pub fn l2_norm(a: &Tensor) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let m = elementwise(ElementwiseOp::Mul, &t(&[1.0, 2.0]), &t(&[3.0, 4.0])).unwrap();
        assert_eq!(m.data(), &[3.0, 8.0]);
        let x = t(&[0.25, -3.0, 7.5]);
        assert!(x.add(&Tensor::zeros_like(&x)).unwrap().bitwise_eq(&x));
        assert_eq!(t(&[0.75]).sub(&t(&[0.75])).unwrap().data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn new_rejects_bad_length_and_zero_extent() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp01(&t(&[1.3, -0.2, 0.5])).data(), &[1.0, 0.0, 0.5]);
        let z = Tensor::zeros(&[4]);
        assert!(clamp01(&z).bitwise_eq(&z));
        assert_eq!(clamp01(&t(&[0.999999])).data(), &[0.999999]);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&t(&[3.0, 4.0])), 5.0);
        assert_eq!(l2_norm(&Tensor::zeros(&[5])), 0.0);
        assert_eq!(l2_norm(&t(&[1.0, 1.0, 1.0, 1.0])), 2.0);
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 1..64)
    }

    proptest! {
        #[test]
        fn add_commutes(a in vec_strategy(), seed in any::<u64>()) {
            let b: Vec<f64> = a.iter().enumerate()
                .map(|(i, v)| v * 0.37 + (seed.wrapping_add(i as u64) % 97) as f64)
                .collect();
            let (ta, tb) = (t(&a), t(&b));
            prop_assert!(ta.add(&tb).unwrap().bitwise_eq(&tb.add(&ta).unwrap()));
            prop_assert!(ta.mul(&tb).unwrap().bitwise_eq(&tb.mul(&ta).unwrap()));
        }

        #[test]
        fn clamp_idempotent(a in prop::collection::vec(-3.0f64..3.0, 1..64)) {
            let once = clamp01(&t(&a));
            prop_assert!(clamp01(&once).bitwise_eq(&once));
            prop_assert!(once.min() >= 0.0 && once.max() <= 1.0);
        }

        #[test]
        fn norm_homogeneous(a in vec_strategy(), c in -1e3f64..1e3) {
            let x = t(&a);
            let lhs = l2_norm(&x.scale(c));
            let rhs = c.abs() * l2_norm(&x);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(f64::MIN_POSITIVE));
        }
    }
}
