//! Secure retraining and client/server partitioning.
//!
//! [`retrain`] turns a dataset with drawn signals into a model that answers
//! with *flipped* labels: the signal encoding is concatenated into the
//! network right after the preserved prefix (at the input when nothing is
//! preserved), and only the layers after the prefix learn. [`partition`]
//! then splits any such model at layer `k` into a [`ClientHalf`] — safe to
//! publish, holds the concat point — and a [`ServerHalf`] that finishes the
//! computation without ever seeing the signal.
//!
//! Splitting never changes arithmetic: composing the halves reproduces the
//! full model's output bitwise.

use crate::data::model_file::{activation_code, ModelFile, ModelRole};
use crate::error::{Error, Result};
use crate::labeling::SecureDataset;
use crate::nn::{
    Architecture, ConcatSpec, DenseLayer, LayerSpec, Model, Sample, TrainConfig, Trainer,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Widens a dense layer's input by `cs_width` columns so a signal can be
/// concatenated onto its input vector.
///
/// Existing weight columns and all biases are preserved bitwise; the new
/// trailing columns (the signal enters after the original inputs) are
/// Glorot-initialized from `seed` using the widened fan-in.
pub fn extend_layer_for_cs<S: Scalar>(
    layer: &LayerSpec<S>,
    cs_width: usize,
    seed: u64,
) -> Result<LayerSpec<S>> {
    if cs_width == 0 {
        return Err(Error::Contract("signal width must be positive".into()));
    }
    let dense = match layer {
        LayerSpec::Dense(d) => d,
        LayerSpec::Conv(_) => {
            return Err(Error::UnsupportedLayer(
                "cannot widen a convolution descriptor for a signal".into(),
            ))
        }
    };
    let new_in = dense.in_dim + cs_width;
    let bound = S::from_config(6.0 / (new_in + dense.out_dim) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound)
        .map_err(|e| Error::Contract(format!("bad init bound: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(new_in * dense.out_dim);
    for o in 0..dense.out_dim {
        weights.extend_from_slice(&dense.weights[o * dense.in_dim..(o + 1) * dense.in_dim]);
        weights.extend((0..cs_width).map(|_| dist.sample(&mut rng)));
    }
    Ok(LayerSpec::Dense(DenseLayer::new(
        new_in,
        dense.out_dim,
        weights,
        dense.biases.clone(),
        dense.activation,
    )?))
}

/// Trains a secure model against a signal-bound dataset.
///
/// With `base` present, `preserve` must be in `1..M`: layers `1..=preserve`
/// are copied bitwise and frozen, layer `preserve+1` is widened for the
/// signal (warm-starting from the base's weights), and the remaining layers
/// train against the flipped labels. Without a base, `preserve` must be 0
/// and a fresh model is built from `arch` with the signal joining at the
/// input. `arch` always describes the *unwidened* shape; when a base is
/// given it is cross-checked against it. Any `frozen_prefix` in `cfg` is
/// overridden by `preserve`.
///
/// Returns the trained model and the per-epoch mean losses.
pub fn retrain<S: Scalar>(
    base: Option<&Model<S>>,
    preserve: usize,
    arch: &Architecture,
    ds: &SecureDataset<S>,
    cfg: &TrainConfig,
    epochs: usize,
    init_seed: u64,
) -> Result<(Model<S>, Vec<S>)> {
    let cs_width = ds.mode().encoded_width();
    if arch.input_dim != ds.base().input_dim() {
        return Err(Error::Contract(format!(
            "architecture expects {}-pixel inputs but the dataset has {}",
            arch.input_dim,
            ds.base().input_dim()
        )));
    }
    if arch.n_classes != ds.base().n_classes {
        return Err(Error::Contract(format!(
            "architecture claims {} classes but the dataset has {}",
            arch.n_classes,
            ds.base().n_classes
        )));
    }
    let model = match base {
        None => {
            if preserve != 0 {
                return Err(Error::Contract(format!(
                    "cannot preserve {preserve} layers without a base model"
                )));
            }
            arch.build_with_concat(
                init_seed,
                Some(ConcatSpec {
                    layer: 1,
                    cs_width,
                }),
            )?
        }
        Some(base) => {
            let m = base.layer_count();
            if preserve == 0 {
                return Err(Error::Contract(
                    "a base model is given but no layers are preserved; \
                     omit the base to train fresh"
                        .into(),
                ));
            }
            if preserve >= m {
                return Err(Error::Contract(format!(
                    "cannot preserve {preserve} of {m} layers; at least the \
                     final layer must stay trainable"
                )));
            }
            if base.concat().is_some() {
                return Err(Error::Contract(
                    "base model already carries a concat point".into(),
                ));
            }
            check_arch_matches(arch, base)?;
            let concat_layer = preserve + 1;
            let mut layers = Vec::with_capacity(m);
            for (i, layer) in base.layers().iter().enumerate() {
                if i + 1 == concat_layer {
                    layers.push(extend_layer_for_cs(layer, cs_width, init_seed)?);
                } else {
                    layers.push(layer.clone());
                }
            }
            Model::new(
                layers,
                Some(ConcatSpec {
                    layer: concat_layer,
                    cs_width,
                }),
                base.n_classes(),
            )?
        }
    };
    let mut cfg = cfg.clone();
    cfg.frozen_prefix = preserve;
    let mut trainer = Trainer::new(model, cfg)?;
    let samples: Vec<Sample<S>> = (0..ds.len())
        .map(|i| Sample {
            input: ds.base().images[i].as_slice(),
            signal: Some(ds.encoded_signal(i)),
            target: ds.new_labels()[i],
        })
        .collect();
    let losses = trainer.train_epochs(&samples, epochs)?;
    Ok((trainer.into_model(), losses))
}

fn check_arch_matches<S: Scalar>(arch: &Architecture, base: &Model<S>) -> Result<()> {
    let mut widths = Vec::with_capacity(arch.layer_count());
    for i in 1..=base.layer_count() {
        widths.push(base.dense(i)?.out_dim);
    }
    let expected: Vec<usize> = arch
        .hidden
        .iter()
        .copied()
        .chain([arch.n_classes])
        .collect();
    let base_in = base.input_dim()?;
    if widths != expected || base_in != arch.input_dim {
        return Err(Error::Contract(format!(
            "base model has shape {base_in}->{widths:?} but the architecture \
             says {}->{expected:?}",
            arch.input_dim
        )));
    }
    Ok(())
}

/// The published fragment: layers `1..=k` plus the concat point.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientHalf<S: Scalar> {
    layers: Vec<DenseLayer<S>>,
    concat: ConcatSpec,
    total_layers: usize,
    partition_k: usize,
    n_classes: usize,
}

/// The private fragment: layers `k+1..=M`, ending in the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerHalf<S: Scalar> {
    layers: Vec<DenseLayer<S>>,
    total_layers: usize,
    partition_k: usize,
    n_classes: usize,
}

/// Split metadata binding two halves together.
///
/// Digests cover each half's layer shapes, activations, and exact parameter
/// bits (f64, little-endian), so any retraining or corruption of either half
/// changes its digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionManifest {
    pub partition_k: usize,
    pub concat_layer: usize,
    pub cs_width: usize,
    pub total_layers: usize,
    pub n_classes: usize,
    /// Width of the activation vector that crosses the wire.
    pub client_out_dim: usize,
    pub client_sha256: String,
    pub server_sha256: String,
}

impl PartitionManifest {
    /// Derives the manifest for a client/server pair, checking that the two
    /// halves actually fit together.
    pub fn bind<S: Scalar>(client: &ClientHalf<S>, server: &ServerHalf<S>) -> Result<Self> {
        if client.partition_k != server.partition_k
            || client.total_layers != server.total_layers
            || client.n_classes != server.n_classes
        {
            return Err(Error::Consistency(format!(
                "halves disagree: client k={} M={} n={}, server k={} M={} n={}",
                client.partition_k,
                client.total_layers,
                client.n_classes,
                server.partition_k,
                server.total_layers,
                server.n_classes
            )));
        }
        if client.out_dim() != server.in_dim() {
            return Err(Error::Consistency(format!(
                "client emits {} values but the server expects {}",
                client.out_dim(),
                server.in_dim()
            )));
        }
        Ok(Self {
            partition_k: client.partition_k,
            concat_layer: client.concat.layer,
            cs_width: client.concat.cs_width,
            total_layers: client.total_layers,
            n_classes: client.n_classes,
            client_out_dim: client.out_dim(),
            client_sha256: digest_layers(&client.layers),
            server_sha256: digest_layers(&server.layers),
        })
    }
}

fn digest_layers<S: Scalar>(layers: &[DenseLayer<S>]) -> String {
    let mut hasher = Sha256::new();
    for layer in layers {
        hasher.update((layer.in_dim as u32).to_le_bytes());
        hasher.update((layer.out_dim as u32).to_le_bytes());
        hasher.update([activation_code(layer.activation)]);
        for v in layer.weights.iter().chain(&layer.biases) {
            hasher.update(v.to_f64().expect("finite parameter").to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Splits a secure model at layer `k` into its two halves.
///
/// The model must carry a concat point at or before `k` — splitting earlier
/// would publish layers that see the raw signal boundary — and `k` must
/// leave the server at least one layer.
pub fn partition<S: Scalar>(
    model: &Model<S>,
    k: usize,
) -> Result<(ClientHalf<S>, ServerHalf<S>, PartitionManifest)> {
    let m = model.layer_count();
    let Some(concat) = model.concat() else {
        return Err(Error::Contract(
            "partitioning requires a secure model with a concat point".into(),
        ));
    };
    if k >= m {
        return Err(Error::Contract(format!(
            "partition layer {k} must leave the server at least one of {m} layers"
        )));
    }
    if k < concat.layer {
        return Err(Error::Security(format!(
            "partition layer {k} precedes the concat point at layer {}; the \
             client half must contain the signal injection",
            concat.layer
        )));
    }
    let mut dense = Vec::with_capacity(m);
    for i in 1..=m {
        dense.push(model.dense(i)?.clone());
    }
    let server_layers = dense.split_off(k);
    let client = ClientHalf {
        layers: dense,
        concat,
        total_layers: m,
        partition_k: k,
        n_classes: model.n_classes(),
    };
    let server = ServerHalf {
        layers: server_layers,
        total_layers: m,
        partition_k: k,
        n_classes: model.n_classes(),
    };
    let manifest = PartitionManifest::bind(&client, &server)?;
    Ok((client, server, manifest))
}

/// Runs `layers` on `current`, splicing `signal` in front of the layer at
/// absolute 1-based index `concat_at` (0 = never). `base` is the absolute
/// index of the layer before `layers[0]`.
fn walk_dense<S: Scalar>(
    layers: &[DenseLayer<S>],
    base: usize,
    concat_at: usize,
    signal: Option<&[S]>,
    mut current: Vec<S>,
) -> Result<Vec<S>> {
    for (off, layer) in layers.iter().enumerate() {
        let abs = base + off + 1;
        if abs == concat_at {
            current.extend_from_slice(signal.expect("validated by caller"));
        }
        if current.len() != layer.in_dim {
            return Err(Error::Shape(format!(
                "layer {abs} expects {} inputs, got {}",
                layer.in_dim,
                current.len()
            )));
        }
        let mut next = vec![S::zero(); layer.out_dim];
        layer.affine_into(&current, &mut next);
        layer.activation.apply(&mut next);
        current = next;
    }
    Ok(current)
}

impl<S: Scalar> ClientHalf<S> {
    /// Computes the activation vector to ship: layers `1..=k` applied to the
    /// input with the encoded signal spliced in at the concat point.
    pub fn forward(&self, input: &[S], signal: &[S]) -> Result<Tensor<S>> {
        if signal.len() != self.concat.cs_width {
            return Err(Error::Contract(format!(
                "signal width {} != concat width {}",
                signal.len(),
                self.concat.cs_width
            )));
        }
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "client half expects {}-pixel inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let out = walk_dense(
            &self.layers,
            0,
            self.concat.layer,
            Some(signal),
            input.to_vec(),
        )?;
        Tensor::new(out)
    }

    /// Raw input width (the signal's entries excluded).
    pub fn input_dim(&self) -> usize {
        let extra = if self.concat.layer == 1 {
            self.concat.cs_width
        } else {
            0
        };
        self.layers[0].in_dim - extra
    }

    /// Width of the shipped activation vector.
    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("validated non-empty").out_dim
    }

    pub fn concat(&self) -> ConcatSpec {
        self.concat
    }

    pub fn partition_k(&self) -> usize {
        self.partition_k
    }

    pub fn total_layers(&self) -> usize {
        self.total_layers
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }
}

impl ClientHalf<f64> {
    /// Wraps the half for serialization.
    pub fn to_file(&self) -> Result<ModelFile> {
        ModelFile::new(
            ModelRole::Client,
            self.total_layers,
            self.partition_k,
            Some(self.concat),
            self.n_classes,
            self.layers.clone(),
        )
    }

    /// Unwraps a deserialized client-role file.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.role() != ModelRole::Client {
            return Err(Error::Contract(format!(
                "expected a client-role file, got {:?}",
                file.role()
            )));
        }
        let (_, total_layers, partition_k, concat, n_classes, layers) = file.into_parts();
        Ok(Self {
            layers,
            concat: concat.expect("client files always carry a concat point"),
            total_layers,
            partition_k,
            n_classes,
        })
    }
}

impl<S: Scalar> ServerHalf<S> {
    /// Class probabilities from a shipped activation vector.
    pub fn forward_probs(&self, d_c_out: &[S]) -> Result<Tensor<S>> {
        let out = walk_dense(
            &self.layers,
            self.partition_k,
            0,
            None,
            d_c_out.to_vec(),
        )?;
        Tensor::new(out)
    }

    /// The flipped label: argmax of the probabilities, ties broken toward
    /// the lower class index.
    pub fn forward(&self, d_c_out: &[S]) -> Result<u32> {
        let probs = self.forward_probs(d_c_out)?;
        Ok(probs.argmax().expect("classifier emits at least two classes") as u32)
    }

    /// Width of the expected activation vector.
    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn partition_k(&self) -> usize {
        self.partition_k
    }

    pub fn total_layers(&self) -> usize {
        self.total_layers
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }
}

impl ServerHalf<f64> {
    /// Wraps the half for serialization.
    pub fn to_file(&self) -> Result<ModelFile> {
        ModelFile::new(
            ModelRole::Server,
            self.total_layers,
            self.partition_k,
            None,
            self.n_classes,
            self.layers.clone(),
        )
    }

    /// Unwraps a deserialized server-role file.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.role() != ModelRole::Server {
            return Err(Error::Contract(format!(
                "expected a server-role file, got {:?}",
                file.role()
            )));
        }
        let (_, total_layers, partition_k, _, n_classes, layers) = file.into_parts();
        Ok(Self {
            layers,
            total_layers,
            partition_k,
            n_classes,
        })
    }
}
