//! Complex-valued building blocks: convolution, whitening batch
//! normalization, split activations, the three max-pooling variants, fully
//! connected layers, and the real-valued head (amplitude readout plus softmax
//! cross-entropy).

mod activation;
mod batchnorm;
mod conv;
mod head;
mod linear;
mod pool;

pub use activation::{Activation, ActivationKind};
pub use batchnorm::{ComplexBatchNorm, Cov2x2};
pub use conv::ComplexConv2d;
pub use head::{amplitude_layer, softmax_cross_entropy};
pub use linear::ComplexLinear;
pub use pool::{pool_select, ComplexMaxPool, PoolIndices, PoolVariant};

/// Whether a forward pass uses batch statistics (training) or running
/// statistics (inference), and whether running statistics are updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Train { update_running: bool },
    Eval,
}

impl ForwardMode {
    pub fn is_train(self) -> bool {
        matches!(self, ForwardMode::Train { .. })
    }
}
