//! Complex-valued convolutional neural networks for coherent-image target
//! recognition, built from scratch: split complex tensors, reverse-mode
//! autodiff, complex convolution (four real convolutions), covariance
//! whitening batch normalization, split activations, three complex
//! max-pooling variants including area pooling, the CVGG-Net and CVnet5
//! architectures, Adam training, and a synthetic phase-encoded dataset to
//! verify that phase information improves recognition.
//!
//! Two precisions share one code path: f64 for gradient checking and tests,
//! f32 for training. Precision is fixed at tensor construction and never
//! mixed within a graph.

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod layers;
pub mod models;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use graph::{grad_check, zero_grads, CVar, Graph, Parameter, RVar};
pub use layers::{ActivationKind, ForwardMode, PoolVariant};
pub use models::{amplitude_only_mode, build_cvggnet, build_cvnet5, Model, ModelSpec};
pub use scalar::Scalar;
pub use tensor::{ComplexTensor, RealTensor};
pub use train::{compare_variants, evaluate, train, CompareAxis, TrainConfig};
