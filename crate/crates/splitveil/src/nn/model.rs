//! Multi-layer models: validation, forward pass, seeded construction.

use crate::error::{Error, Result};
use crate::nn::layer::{Activation, DenseLayer, LayerSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Where (and how wide) the secret-signal encoding joins the activations.
///
/// `layer` is 1-based: the signal vector is appended to the *input* of that
/// layer — to the raw input when `layer == 1`, otherwise to the previous
/// layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConcatSpec {
    pub layer: usize,
    pub cs_width: usize,
}

/// An ordered stack of layers ending in a softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S: Scalar> {
    layers: Vec<LayerSpec<S>>,
    concat: Option<ConcatSpec>,
    n_classes: usize,
}

impl<S: Scalar> Model<S> {
    /// Validates and assembles a model.
    ///
    /// Adjacent dense layers must have compatible dimensions, with the layer
    /// at the concat point expecting `cs_width` extra inputs. A dense final
    /// layer must be a softmax of width `n_classes`. Convolution descriptors
    /// may appear (for cost accounting) but make the model non-executable.
    pub fn new(
        layers: Vec<LayerSpec<S>>,
        concat: Option<ConcatSpec>,
        n_classes: usize,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("model needs at least one layer".into()));
        }
        if n_classes < 2 {
            return Err(Error::Contract(format!(
                "model needs at least 2 classes, got {n_classes}"
            )));
        }
        if let Some(c) = &concat {
            if c.layer == 0 || c.layer > layers.len() {
                return Err(Error::Contract(format!(
                    "concat layer {} out of range 1..={}",
                    c.layer,
                    layers.len()
                )));
            }
            if c.cs_width == 0 {
                return Err(Error::Contract("concat width must be positive".into()));
            }
        }
        // Chain compatibility between consecutive dense layers.
        for i in 1..layers.len() {
            let (LayerSpec::Dense(prev), LayerSpec::Dense(next)) = (&layers[i - 1], &layers[i])
            else {
                continue;
            };
            let extra = match &concat {
                Some(c) if c.layer == i + 1 => c.cs_width,
                _ => 0,
            };
            if next.in_dim != prev.out_dim + extra {
                return Err(Error::Shape(format!(
                    "layer {} expects {} inputs but layer {} emits {}{}",
                    i + 1,
                    next.in_dim,
                    i,
                    prev.out_dim,
                    if extra > 0 {
                        format!(" (+{extra} signal)")
                    } else {
                        String::new()
                    }
                )));
            }
        }
        if let LayerSpec::Dense(last) = layers.last().unwrap() {
            if last.out_dim != n_classes {
                return Err(Error::Shape(format!(
                    "final layer emits {} values but the model claims {} classes",
                    last.out_dim, n_classes
                )));
            }
            if last.activation != Activation::Softmax {
                return Err(Error::Contract(
                    "final dense layer must use softmax so outputs are class probabilities"
                        .into(),
                ));
            }
        }
        Ok(Self {
            layers,
            concat,
            n_classes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec<S>] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn concat(&self) -> Option<ConcatSpec> {
        self.concat
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Consumes the model, returning its parts (for partitioning/serialization).
    pub fn into_parts(self) -> (Vec<LayerSpec<S>>, Option<ConcatSpec>, usize) {
        (self.layers, self.concat, self.n_classes)
    }

    /// Mutable access for the optimizer and the finite-difference prober.
    /// 0-based; panics on conv layers or out-of-range indices, which the
    /// callers have already excluded.
    pub(crate) fn dense_mut(&mut self, idx: usize) -> &mut DenseLayer<S> {
        match &mut self.layers[idx] {
            LayerSpec::Dense(d) => d,
            LayerSpec::Conv(_) => panic!("layer {} is not dense", idx + 1),
        }
    }

    /// The dense layer at 1-based index `i`.
    pub fn dense(&self, i: usize) -> Result<&DenseLayer<S>> {
        match self.layers.get(i - 1) {
            Some(LayerSpec::Dense(d)) => Ok(d),
            Some(LayerSpec::Conv(_)) => Err(Error::UnsupportedLayer(format!(
                "layer {i} is a convolution descriptor"
            ))),
            None => Err(Error::Contract(format!(
                "layer index {i} out of range 1..={}",
                self.layers.len()
            ))),
        }
    }

    /// Width of the raw input expected by `forward` (excluding any signal).
    pub fn input_dim(&self) -> Result<usize> {
        let first = self.dense(1)?;
        let extra = match &self.concat {
            Some(c) if c.layer == 1 => c.cs_width,
            _ => 0,
        };
        Ok(first.in_dim - extra)
    }

    /// Full forward pass to class probabilities.
    ///
    /// `signal` must be present exactly when the model has a concat point,
    /// with length `cs_width`.
    pub fn forward(&self, input: &[S], signal: Option<&[S]>) -> Result<Tensor<S>> {
        match (&self.concat, signal) {
            (Some(c), Some(s)) if s.len() != c.cs_width => {
                return Err(Error::Contract(format!(
                    "signal width {} != concat width {}",
                    s.len(),
                    c.cs_width
                )));
            }
            (Some(_), None) => {
                return Err(Error::Contract(
                    "model has a concat point but no signal was supplied".into(),
                ));
            }
            (None, Some(_)) => {
                return Err(Error::Contract(
                    "model has no concat point but a signal was supplied".into(),
                ));
            }
            _ => {}
        }
        let out = run_dense_stack(&self.layers, self.concat, 0, input, signal)?;
        Tensor::new(out)
    }

    /// Argmax class prediction; ties resolve to the lower label.
    pub fn predict(&self, input: &[S], signal: Option<&[S]>) -> Result<u32> {
        let probs = self.forward(input, signal)?;
        Ok(probs.argmax().expect("model emits at least two classes") as u32)
    }
}

/// Runs `layers` (all dense) on `input`, splicing `signal` in front of the
/// layer whose *absolute* 1-based index equals the concat point. `base_index`
/// is the absolute index of the layer *before* `layers[0]` (0 for a full
/// model, `k` for a server fragment), letting fragments share this walker.
pub(crate) fn run_dense_stack<S: Scalar>(
    layers: &[LayerSpec<S>],
    concat: Option<ConcatSpec>,
    base_index: usize,
    input: &[S],
    signal: Option<&[S]>,
) -> Result<Vec<S>> {
    let mut current: Vec<S> = input.to_vec();
    for (off, layer) in layers.iter().enumerate() {
        let abs_index = base_index + off + 1;
        let dense = match layer {
            LayerSpec::Dense(d) => d,
            LayerSpec::Conv(_) => {
                return Err(Error::UnsupportedLayer(format!(
                    "cannot execute convolution descriptor at layer {abs_index}"
                )))
            }
        };
        if let Some(c) = &concat {
            if c.layer == abs_index {
                let signal = signal.expect("validated by caller");
                current.extend_from_slice(signal);
            }
        }
        if current.len() != dense.in_dim {
            return Err(Error::Shape(format!(
                "layer {abs_index} expects {} inputs, got {}",
                dense.in_dim,
                current.len()
            )));
        }
        let mut next = vec![S::zero(); dense.out_dim];
        dense.affine_into(&current, &mut next);
        dense.activation.apply(&mut next);
        current = next;
    }
    Ok(current)
}

/// Shape description for building fresh models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_classes: usize,
    pub hidden_activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, n_classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            n_classes,
            hidden_activation: Activation::Relu,
        }
    }

    /// Widths flowing into each layer: input, then the hidden sizes.
    fn fan_chain(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.n_classes);
        dims
    }

    /// Number of weight layers this architecture produces.
    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Seeded Glorot-initialized model, optionally widened for a signal
    /// concat at `concat.layer`.
    pub fn build_with_concat<S: Scalar>(
        &self,
        seed: u64,
        concat: Option<ConcatSpec>,
    ) -> Result<Model<S>> {
        let dims = self.fan_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 1..dims.len() {
            let extra = match &concat {
                Some(c) if c.layer == i => c.cs_width,
                _ => 0,
            };
            let activation = if i == dims.len() - 1 {
                Activation::Softmax
            } else {
                self.hidden_activation
            };
            layers.push(LayerSpec::Dense(DenseLayer::glorot(
                dims[i - 1] + extra,
                dims[i],
                activation,
                &mut rng,
            )?));
        }
        Model::new(layers, concat, self.n_classes)
    }

    /// Seeded Glorot-initialized model without a concat point.
    pub fn build<S: Scalar>(&self, seed: u64) -> Result<Model<S>> {
        self.build_with_concat(seed, None)
    }
}
