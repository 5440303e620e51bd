//! Layer kinds: executable dense layers and count-only convolution geometry.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::distr::{Distribution, Uniform};
use rand::Rng;

/// Elementwise (or, for softmax, vector-wide) output nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
}

impl Activation {
    /// Applies the activation in place.
    pub fn apply<S: Scalar>(self, z: &mut [S]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for v in z.iter_mut() {
                    if *v < S::zero() {
                        *v = S::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for v in z.iter_mut() {
                    *v = S::one() / (S::one() + (-*v).exp());
                }
            }
            Activation::Softmax => {
                // Max-shifted for numerical stability; exact result unchanged.
                let max = z.iter().copied().fold(S::neg_infinity(), S::max);
                let mut sum = S::zero();
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in z.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }

    /// Derivative w.r.t. the pre-activation, given pre-activation `z` and
    /// activation output `a`. Not defined for softmax, whose gradient is
    /// handled jointly with the cross-entropy loss.
    pub fn derivative<S: Scalar>(self, z: S, a: S) -> S {
        match self {
            Activation::Identity => S::one(),
            Activation::Relu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Sigmoid => a * (S::one() - a),
            Activation::Softmax => {
                unreachable!("softmax derivative is fused with the loss")
            }
        }
    }
}

/// Fully-connected layer with row-major weights (`out_dim × in_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<S: Scalar> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major: `weights[o * in_dim + i]` connects input `i` to output `o`.
    pub weights: Vec<S>,
    pub biases: Vec<S>,
    pub activation: Activation,
}

impl<S: Scalar> DenseLayer<S> {
    /// Builds a layer from explicit parameters, validating shapes and
    /// finiteness.
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<S>,
        biases: Vec<S>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Contract(format!(
                "dense layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::Shape(format!(
                "dense layer {in_dim}->{out_dim} needs {} weights, got {}",
                in_dim * out_dim,
                weights.len()
            )));
        }
        if biases.len() != out_dim {
            return Err(Error::Shape(format!(
                "dense layer {in_dim}->{out_dim} needs {out_dim} biases, got {}",
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::Contract(
                "dense layer parameters must be finite".into(),
            ));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform initialization: weights drawn from
    /// U(−√(6/(in+out)), +√(6/(in+out))), biases zero.
    pub fn glorot<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Contract(format!(
                "dense layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        let bound = S::from_config(6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::Contract(format!("bad init bound: {e}")))?;
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self::new(
            in_dim,
            out_dim,
            weights,
            vec![S::zero(); out_dim],
            activation,
        )
    }

    /// Affine part only: `z = Wx + b`, written into `out`.
    pub fn affine_into(&self, input: &[S], out: &mut [S]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += *w * *x;
            }
            *out_v = acc;
        }
    }

    /// Full forward: affine then activation.
    pub fn forward(&self, input: &[S]) -> Result<Vec<S>> {
        if input.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "layer expects input of {}, got {}",
                self.in_dim,
                input.len()
            )));
        }
        let mut out = vec![S::zero(); self.out_dim];
        self.affine_into(input, &mut out);
        self.activation.apply(&mut out);
        Ok(out)
    }
}

/// Convolution geometry for cost/leakage accounting.
///
/// Never executable: the engine only runs dense layers. The fields mirror the
/// usual kernel description — height `n`, width `l`, input channels `c`,
/// kernel count `kc`, stride `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDescriptor {
    pub kernel_height: usize,
    pub kernel_width: usize,
    pub in_channels: usize,
    pub kernels: usize,
    pub stride: usize,
}

impl ConvDescriptor {
    pub fn new(
        kernel_height: usize,
        kernel_width: usize,
        in_channels: usize,
        kernels: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel_height == 0 || kernel_width == 0 || in_channels == 0 || kernels == 0 || stride == 0
        {
            return Err(Error::Contract(
                "conv descriptor fields must all be positive".into(),
            ));
        }
        Ok(Self {
            kernel_height,
            kernel_width,
            in_channels,
            kernels,
            stride,
        })
    }

    /// Weights plus one bias per kernel.
    pub fn param_count(&self) -> u64 {
        self.kernel_height as u64 * self.kernel_width as u64 * self.in_channels as u64
            * self.kernels as u64
            + self.kernels as u64
    }
}

/// A layer as stored in a model: executable dense or count-only conv.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec<S: Scalar> {
    Dense(DenseLayer<S>),
    Conv(ConvDescriptor),
}

impl<S: Scalar> LayerSpec<S> {
    pub fn param_count(&self) -> u64 {
        match self {
            LayerSpec::Dense(d) => d.out_dim as u64 * d.in_dim as u64 + d.out_dim as u64,
            LayerSpec::Conv(c) => c.param_count(),
        }
    }
}

/// Total trainable parameters across `layers` (weights + biases).
pub fn param_count<S: Scalar>(layers: &[LayerSpec<S>]) -> u64 {
    layers.iter().map(LayerSpec::param_count).sum()
}
