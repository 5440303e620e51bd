//! One-dimensional tensors with finiteness checking at construction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A 1-D vector of scalars.
///
/// Every constructor rejects NaN and infinities, so holding a `Tensor` is
/// proof the values are finite. Internal hot paths work on raw slices and
/// re-wrap at public boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Wraps a vector, rejecting non-finite entries.
    pub fn new(data: Vec<S>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "tensor entry {i} is not finite: {}",
                data[i]
            )));
        }
        Ok(Self { data })
    }

    /// Zero-filled tensor of the given length.
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![S::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// Index of the largest entry; ties resolve to the lower index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, v) in self.data.iter().enumerate() {
            match best {
                None => best = Some(i),
                Some(b) if *v > self.data[b] => best = Some(i),
                _ => {}
            }
        }
        best
    }
}

impl<S: Scalar> AsRef<[S]> for Tensor<S> {
    fn as_ref(&self) -> &[S] {
        &self.data
    }
}

impl<S: Scalar> std::ops::Index<usize> for Tensor<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.data[i]
    }
}

/// Euclidean norm of a slice.
pub fn norm2<S: Scalar>(v: &[S]) -> S {
    v.iter().map(|x| *x * *x).sum::<S>().sqrt()
}

/// Relative L2 error ‖a − b‖ / ‖b‖, with a tiny floor on the denominator.
pub fn relative_l2_error<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let diff: S = a
        .iter()
        .zip(b)
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum::<S>()
        .sqrt();
    let denom = norm2(b).max(S::from_config(1e-30));
    diff / denom
}
