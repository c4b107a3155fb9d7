//! Small neural kernels with hand-written gradients.
//!
//! Everything here is sized for networks with a handful of hidden units:
//! dense stacks, a GRU and an LSTM cell, the usual losses and two
//! optimizers. Parameters are exposed as flat vectors so optimizers,
//! aggregation and checkpoints all work on the same layout.

mod checkpoint;
mod dense;
mod gradcheck;
mod loss;
mod optim;
mod recurrent;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{Activation, DenseLayer, DenseNet, DenseScratch, DenseTrace};
pub use gradcheck::{grad_check, relative_error, FD_STEP};
pub use loss::{cross_entropy_loss, mse_loss, softmax, softmax_cross_entropy, LossKind, LOG_FLOOR};
pub use optim::{Adam, AdamConfig, Optimizer, OptimizerConfig, Sgd};
pub use recurrent::{
    CellKind, GruCell, LstmCell, RecurrentCell, SequenceClassifier, SequenceTrace,
};
pub use tensor::Tensor2;

use rand::Rng;

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
pub fn init_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn ensure_finite(grads: &[f64]) -> crate::Result<()> {
    if grads.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::Training("non-finite gradient".into()))
    }
}
