//! Dense linear algebra, MLP encoders with hand-written backpropagation,
//! AdamW with step decay, and a central-difference gradient oracle.

mod checkpoint;
mod encoder;
mod gradcheck;
mod matrix;
mod optim;

pub use checkpoint::{load_encoder, save_encoder, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{Activation, EncoderGrads, EncoderParams, Layer, Tape};
pub use gradcheck::{finite_difference_grad, max_relative_error, relative_error};
pub use matrix::{DenseMatrix, Real};
pub use optim::{AdamW, AdamWConfig, LrSchedule, OptimizerState};

/// Dot product accumulated at double precision.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
