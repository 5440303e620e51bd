//! splitveil: a split-inference privacy toolkit.
//!
//! The library trains small dense classifiers whose *raw* output labels are
//! deliberately wrong: a secret per-sample complement signal (a bit, or an
//! offset for n-class models) is concatenated into the network during
//! retraining so that only a holder of the signal can recover the true
//! prediction. Models are then partitioned into a publishable client half and
//! a private server half; only the client half's activations ever cross the
//! wire.
//!
//! Alongside the engine, the crate ships the audit tooling that justifies
//! publishing a client half at all: equation/unknown counting for convolution
//! front ends, a rank-revealing linear-system solver that attempts input
//! reconstruction from published weights, and a learned-probe estimator of
//! how much the exchanged activations reveal about the secret signal.
//!
//! The numeric core is generic over [`scalar::Scalar`] (f32 or f64); the
//! shipped interfaces — model files, the wire protocol, the CLI — pin f64,
//! and the aliases at the crate root refer to that concrete instantiation.

pub mod data;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod leakage;
pub mod nn;
pub mod pipeline;
pub mod protocol;
pub mod scalar;
pub mod secure;
pub mod tensor;

pub use error::{Error, Result};

/// Concrete f64 tensor used by every shipped interface.
pub type Tensor = tensor::Tensor<f64>;
/// Concrete f64 dense layer.
pub type DenseLayer = nn::DenseLayer<f64>;
/// Concrete f64 layer spec.
pub type LayerSpec = nn::LayerSpec<f64>;
/// Concrete f64 model.
pub type Model = nn::Model<f64>;
/// Concrete f64 trainer.
pub type Trainer = nn::Trainer<f64>;
/// Concrete f64 gradient set.
pub type Gradients = nn::Gradients<f64>;
/// Concrete f64 dataset.
pub type Dataset = data::Dataset<f64>;
/// Concrete f64 signal-bound dataset.
pub type SecureDataset = labeling::SecureDataset<f64>;
/// Concrete f64 published half.
pub type ClientHalf = secure::ClientHalf<f64>;
/// Concrete f64 private half.
pub type ServerHalf = secure::ServerHalf<f64>;
/// Concrete f64 attack system.
pub type LinearSystem = leakage::LinearSystem<f64>;
