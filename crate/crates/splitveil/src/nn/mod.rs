//! Dense neural-network engine: layers, models, training, gradient checks.

mod gradcheck;
mod layer;
mod model;
mod train;

pub use gradcheck::{
    analytic_gradients, batch_loss, gradient_check, max_relative_error, numeric_gradients,
};
pub use layer::{param_count, Activation, ConvDescriptor, DenseLayer, LayerSpec};
pub use model::{Architecture, ConcatSpec, Model};
pub use train::{train_step, Gradients, LayerGrad, Sample, TrainConfig, Trainer};
