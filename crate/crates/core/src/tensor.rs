//! Dense, row-major `f64` tensor.
//!
//! Only the handful of operations the network and the heatmap algebra need.
//! Every constructor and operation keeps the data finite; anything that would
//! produce NaN or infinity is rejected instead.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("operation on an empty tensor")]
    Empty,
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_finite(data: &[f64]) -> Result<(), TensorError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite { index }),
        None => Ok(()),
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    /// One-dimensional tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![1.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    fn same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn elementwise_mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.same_shape(other)?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        check_finite(&data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn reduce_sum(&self) -> Result<f64, TensorError> {
        if self.data.is_empty() {
            return Err(TensorError::Empty);
        }
        let sum = self.data.iter().fold(0.0, |acc, v| acc + v);
        if !sum.is_finite() {
            return Err(TensorError::NonFinite { index: 0 });
        }
        Ok(sum)
    }

    pub fn reduce_max(&self) -> Result<f64, TensorError> {
        self.argmax().map(|i| self.data[i])
    }

    pub fn reduce_min(&self) -> Result<f64, TensorError> {
        self.argmin().map(|i| self.data[i])
    }

    /// Index of the first maximum.
    pub fn argmax(&self) -> Result<usize, TensorError> {
        argmax(&self.data).ok_or(TensorError::Empty)
    }

    /// Index of the first minimum.
    pub fn argmin(&self) -> Result<usize, TensorError> {
        argmin(&self.data).ok_or(TensorError::Empty)
    }

    /// Inner product of two tensors of equal length, shapes ignored.
    pub fn dot(&self, other: &Tensor) -> Result<f64, TensorError> {
        if self.len() != other.len() {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let v = dot(&self.data, &other.data);
        if !v.is_finite() {
            return Err(TensorError::NonFinite { index: 0 });
        }
        Ok(v)
    }
}

/// Sequential left-to-right inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// First index of the maximum; `None` on empty input.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// First index of the minimum; `None` on empty input.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn mul_examples() {
        assert_eq!(t(&[2.0]).elementwise_mul(&t(&[3.0])).unwrap().data(), &[6.0]);
        assert_eq!(
            t(&[1.0, 0.0, 2.0])
                .elementwise_mul(&t(&[0.5, 9.0, 0.5]))
                .unwrap()
                .data(),
            &[0.5, 0.0, 1.0]
        );
        let x = Tensor::new(vec![2, 2], vec![1.5, -2.0, 0.25, 7.0]).unwrap();
        assert_eq!(Tensor::ones(vec![2, 2]).elementwise_mul(&x).unwrap(), x);
    }

    #[test]
    fn mul_rejects_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![3, 2]);
        assert!(matches!(
            a.elementwise_mul(&b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn construction_checks() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0; 3]),
            Err(TensorError::LengthMismatch { expected: 4, .. })
        ));
        assert_eq!(
            Tensor::from_vec(vec![0.0, f64::NAN]),
            Err(TensorError::NonFinite { index: 1 })
        );
        let big = t(&[1e300]);
        assert!(big.elementwise_mul(&big).is_err());
    }

    #[test]
    fn reductions() {
        let a = t(&[0.2, 0.7, 0.1]);
        assert_eq!(a.reduce_max().unwrap(), 0.7);
        assert_eq!(a.argmax().unwrap(), 1);
        assert_eq!(t(&[1.0, 1.0]).argmax().unwrap(), 0);
        assert_eq!(t(&[3.0, 1.0, 1.0]).argmin().unwrap(), 1);
        let empty = Tensor::zeros(vec![0]);
        assert_eq!(empty.reduce_max(), Err(TensorError::Empty));
        assert_eq!(empty.reduce_sum(), Err(TensorError::Empty));
        assert_eq!(empty.argmax(), Err(TensorError::Empty));
    }

    #[test]
    fn softmax_output_sums_to_one() {
        let logits = [0.3, -1.2, 2.5, 0.0];
        let probs = crate::micronet::softmax(&logits);
        let s = t(&probs).reduce_sum().unwrap();
        assert!((s - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn dot_examples() {
        let v = t(&[1.0, 2.0, 3.0]).dot(&t(&[0.1, -0.2, 0.3])).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
        assert_eq!(t(&[4.0, -2.0]).dot(&t(&[0.0, 0.0])).unwrap(), 0.0);
        assert!(t(&[1.0]).dot(&t(&[1.0, 2.0])).is_err());
    }

    fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        let mut i = 0;
        while i < a.len() {
            acc += a[i] * b[i];
            i += 1;
        }
        acc
    }

    proptest! {
        #[test]
        fn dot_matches_loop_oracle(pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..64)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let got = t(&a).dot(&t(&b)).unwrap();
            prop_assert!((got - naive_dot(&a, &b)).abs() <= 1e-12);
        }

        #[test]
        fn mul_commutes(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..32)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (a, b) = (t(&a), t(&b));
            prop_assert_eq!(a.elementwise_mul(&b).unwrap(), b.elementwise_mul(&a).unwrap());
        }

        #[test]
        fn reductions_are_repeatable(v in proptest::collection::vec(-1e6f64..1e6, 1..128)) {
            let x = t(&v);
            prop_assert_eq!(x.reduce_sum().unwrap().to_bits(), x.reduce_sum().unwrap().to_bits());
            prop_assert_eq!(x.argmax().unwrap(), x.argmax().unwrap());
        }
    }
}
