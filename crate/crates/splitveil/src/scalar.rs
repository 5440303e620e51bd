//! Scalar abstraction for the numeric core.
//!
//! Everything math-heavy (tensors, layers, training, the linear solver) is
//! generic over [`Scalar`] so the same code runs in f32 or f64. The shipped
//! interfaces (model files, the wire protocol, the CLI) pin f64 via the
//! aliases at the crate root, matching their byte-level contracts.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use rand::distr::uniform::SampleUniform;
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable by the numeric core.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + SampleUniform
    + Sum
    + Default
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from f64, for configuration values (learning rate,
    /// tolerances) that are specified as f64 regardless of the working type.
    fn from_config(v: f64) -> Self {
        Self::from_f64(v).expect("finite config value representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
