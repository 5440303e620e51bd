//! Mini-batch momentum-SGD training with frozen layer prefixes.

use crate::error::{Error, Result};
use crate::nn::layer::{Activation, DenseLayer, LayerSpec};
use crate::nn::model::Model;
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Training hyperparameters.
///
/// `dropout` is accepted for configuration compatibility but is not applied
/// by the dense engine; it exists so configs carrying the field parse and
/// round-trip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Leading layers (1-based count) excluded from updates and gradient
    /// computation. Their parameters stay bitwise identical.
    pub frozen_prefix: usize,
    /// Accepted but unused; see struct docs.
    pub dropout: f64,
    /// Seed for the per-epoch shuffle order.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 16,
            momentum: 0.9,
            frozen_prefix: 0,
            dropout: 0.5,
            shuffle_seed: 0,
        }
    }
}

/// One labeled training example, borrowing its data.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a, S: Scalar> {
    pub input: &'a [S],
    pub signal: Option<&'a [S]>,
    pub target: u32,
}

/// Per-layer gradient of the batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<S: Scalar> {
    pub weights: Vec<S>,
    pub biases: Vec<S>,
}

/// Gradients aligned with the model's layers; `None` for frozen layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S: Scalar> {
    pub per_layer: Vec<Option<LayerGrad<S>>>,
}

/// Mean cross-entropy of the model over a batch.
pub(crate) fn mean_cross_entropy<S: Scalar>(
    model: &Model<S>,
    batch: &[Sample<S>],
) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::Contract("batch must be non-empty".into()));
    }
    let inv_b = S::one() / S::from_usize(batch.len()).unwrap();
    let mut loss = S::zero();
    for s in batch {
        if (s.target as usize) >= model.n_classes() {
            return Err(Error::Contract(format!(
                "target {} out of range for {} classes",
                s.target,
                model.n_classes()
            )));
        }
        let probs = model.forward(s.input, s.signal)?;
        let p = probs[s.target as usize].max(S::min_positive_value());
        loss += -(p.ln()) * inv_b;
    }
    Ok(loss)
}

/// Computes the mean-batch gradient of the cross-entropy loss for all layers
/// after the frozen prefix, along with the loss itself.
///
/// The final layer must be softmax (its gradient is fused with the loss);
/// softmax anywhere else is rejected, as is any convolution descriptor.
pub(crate) fn compute_gradients<S: Scalar>(
    model: &Model<S>,
    batch: &[Sample<S>],
    frozen_prefix: usize,
) -> Result<(Gradients<S>, S)> {
    if batch.is_empty() {
        return Err(Error::Contract("batch must be non-empty".into()));
    }
    let m = model.layer_count();
    if frozen_prefix > m {
        return Err(Error::Contract(format!(
            "frozen prefix {frozen_prefix} exceeds layer count {m}"
        )));
    }
    let dense: Vec<&DenseLayer<S>> = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            LayerSpec::Dense(d) => Ok(d),
            LayerSpec::Conv(_) => Err(Error::UnsupportedLayer(format!(
                "cannot train through convolution descriptor at layer {}",
                i + 1
            ))),
        })
        .collect::<Result<_>>()?;
    for (i, d) in dense.iter().enumerate() {
        if d.activation == Activation::Softmax && i + 1 != m {
            return Err(Error::Contract(
                "softmax is only trainable as the final activation".into(),
            ));
        }
    }

    let concat = model.concat();
    let inv_b = S::one() / S::from_usize(batch.len()).unwrap();
    let mut grads: Vec<Option<LayerGrad<S>>> = dense
        .iter()
        .enumerate()
        .map(|(i, d)| {
            (i >= frozen_prefix).then(|| LayerGrad {
                weights: vec![S::zero(); d.weights.len()],
                biases: vec![S::zero(); d.out_dim],
            })
        })
        .collect();
    let mut loss = S::zero();

    for s in batch {
        if (s.target as usize) >= model.n_classes() {
            return Err(Error::Contract(format!(
                "target {} out of range for {} classes",
                s.target,
                model.n_classes()
            )));
        }
        // Forward, caching each layer's (post-splice) input, pre-activation,
        // and activation.
        let mut inputs: Vec<Vec<S>> = Vec::with_capacity(m);
        let mut pre: Vec<Vec<S>> = Vec::with_capacity(m);
        let mut act: Vec<Vec<S>> = Vec::with_capacity(m);
        let mut current: Vec<S> = s.input.to_vec();
        for (i, d) in dense.iter().enumerate() {
            if let Some(c) = concat {
                if c.layer == i + 1 {
                    let sig = s.signal.ok_or_else(|| {
                        Error::Contract("model has a concat point but the sample has no signal".into())
                    })?;
                    if sig.len() != c.cs_width {
                        return Err(Error::Contract(format!(
                            "signal width {} != concat width {}",
                            sig.len(),
                            c.cs_width
                        )));
                    }
                    current.extend_from_slice(sig);
                }
            }
            if current.len() != d.in_dim {
                return Err(Error::Shape(format!(
                    "layer {} expects {} inputs, got {}",
                    i + 1,
                    d.in_dim,
                    current.len()
                )));
            }
            let mut z = vec![S::zero(); d.out_dim];
            d.affine_into(&current, &mut z);
            let mut a = z.clone();
            d.activation.apply(&mut a);
            inputs.push(std::mem::replace(&mut current, a.clone()));
            pre.push(z);
            act.push(a);
        }
        let probs = &act[m - 1];
        let p_t = probs[s.target as usize].max(S::min_positive_value());
        loss += -(p_t.ln()) * inv_b;

        // Backward: softmax+CE at the top gives delta = (p − y)/B.
        let mut delta: Vec<S> = probs.iter().map(|p| *p * inv_b).collect();
        delta[s.target as usize] -= inv_b;

        for i in (frozen_prefix..m).rev() {
            let d = dense[i];
            if let Some(g) = grads[i].as_mut() {
                for (o, dv) in delta.iter().enumerate() {
                    let row = &mut g.weights[o * d.in_dim..(o + 1) * d.in_dim];
                    for (w, x) in row.iter_mut().zip(&inputs[i]) {
                        *w += *dv * *x;
                    }
                    g.biases[o] += *dv;
                }
            }
            if i == frozen_prefix {
                break; // everything below is frozen
            }
            // Propagate through W_i, keeping only the columns that came from
            // the previous layer (dropping signal columns at the concat).
            let prev_len = act[i - 1].len();
            let mut upstream = vec![S::zero(); prev_len];
            for (o, dv) in delta.iter().enumerate() {
                let row = &d.weights[o * d.in_dim..o * d.in_dim + prev_len];
                for (u, w) in upstream.iter_mut().zip(row) {
                    *u += *w * *dv;
                }
            }
            let prev = dense[i - 1];
            for ((u, z), a) in upstream.iter_mut().zip(&pre[i - 1]).zip(&act[i - 1]) {
                *u *= prev.activation.derivative(*z, *a);
            }
            delta = upstream;
        }
    }
    Ok((Gradients { per_layer: grads }, loss))
}

/// Stateful trainer: owns the model plus momentum buffers.
///
/// The update rule is classic momentum SGD: `v ← μ·v + g`, `θ ← θ − lr·v`,
/// with `g` the mean gradient over the batch.
pub struct Trainer<S: Scalar> {
    model: Model<S>,
    cfg: TrainConfig,
    vel_w: Vec<Vec<S>>,
    vel_b: Vec<Vec<S>>,
    shuffle_rng: ChaCha8Rng,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: Model<S>, cfg: TrainConfig) -> Result<Self> {
        if cfg.frozen_prefix > model.layer_count() {
            return Err(Error::Contract(format!(
                "frozen prefix {} exceeds layer count {}",
                cfg.frozen_prefix,
                model.layer_count()
            )));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Contract("batch size must be positive".into()));
        }
        if !(cfg.learning_rate.is_finite() && cfg.momentum.is_finite()) {
            return Err(Error::Contract("hyperparameters must be finite".into()));
        }
        let (vel_w, vel_b) = model
            .layers()
            .iter()
            .map(|l| match l {
                LayerSpec::Dense(d) => (vec![S::zero(); d.weights.len()], vec![S::zero(); d.out_dim]),
                LayerSpec::Conv(_) => (Vec::new(), Vec::new()),
            })
            .unzip();
        let shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
        Ok(Self {
            model,
            cfg,
            vel_w,
            vel_b,
            shuffle_rng,
        })
    }

    pub fn model(&self) -> &Model<S> {
        &self.model
    }

    pub fn into_model(self) -> Model<S> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One optimizer step on a batch; returns the batch's mean loss.
    pub fn step(&mut self, batch: &[Sample<S>]) -> Result<S> {
        let (grads, loss) = compute_gradients(&self.model, batch, self.cfg.frozen_prefix)?;
        let lr = S::from_config(self.cfg.learning_rate);
        let mu = S::from_config(self.cfg.momentum);
        for (i, g) in grads.per_layer.iter().enumerate() {
            let Some(g) = g else { continue };
            let layer = self.model.dense_mut(i);
            for ((w, v), gw) in layer
                .weights
                .iter_mut()
                .zip(&mut self.vel_w[i])
                .zip(&g.weights)
            {
                *v = mu * *v + *gw;
                *w -= lr * *v;
            }
            for ((b, v), gb) in layer
                .biases
                .iter_mut()
                .zip(&mut self.vel_b[i])
                .zip(&g.biases)
            {
                *v = mu * *v + *gb;
                *b -= lr * *v;
            }
        }
        Ok(loss)
    }

    /// Runs whole epochs over `samples`, shuffling the order each epoch with
    /// the trainer's seeded RNG. Returns the mean loss of each epoch.
    pub fn train_epochs(&mut self, samples: &[Sample<S>], epochs: usize) -> Result<Vec<S>> {
        if samples.is_empty() {
            return Err(Error::Contract("training set must be non-empty".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut self.shuffle_rng);
            let mut acc = S::zero();
            for chunk in order.chunks(self.cfg.batch_size) {
                let batch: Vec<Sample<S>> = chunk.iter().map(|&i| samples[i]).collect();
                let loss = self.step(&batch)?;
                acc += loss * S::from_usize(chunk.len()).unwrap();
            }
            losses.push(acc / S::from_usize(samples.len()).unwrap());
        }
        Ok(losses)
    }

    /// Runs exactly `steps` optimizer steps, cycling through shuffled epochs
    /// as needed. Returns the mean loss of the final step.
    pub fn train_steps(&mut self, samples: &[Sample<S>], steps: usize) -> Result<S> {
        if samples.is_empty() {
            return Err(Error::Contract("training set must be non-empty".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut last = S::zero();
        let mut taken = 0;
        'outer: loop {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                if taken == steps {
                    break 'outer;
                }
                let batch: Vec<Sample<S>> = chunk.iter().map(|&i| samples[i]).collect();
                last = self.step(&batch)?;
                taken += 1;
            }
            if taken == steps {
                break;
            }
        }
        Ok(last)
    }
}

/// One-shot training step: clones the model, applies a single update with
/// fresh (zero) momentum state, and returns the successor model with the
/// batch loss. For step sequences use [`Trainer`], which carries momentum.
pub fn train_step<S: Scalar>(
    model: &Model<S>,
    batch: &[Sample<S>],
    cfg: &TrainConfig,
) -> Result<(Model<S>, S)> {
    let mut trainer = Trainer::new(model.clone(), cfg.clone())?;
    let loss = trainer.step(batch)?;
    Ok((trainer.into_model(), loss))
}
