//! SpaRTAN: a small convolutional vision backbone built on a from-scratch
//! tensor and reverse-mode autodiff engine.
//!
//! Layers, top to bottom:
//!
//! - [`tensor`] and [`autograd`]: NCHW tensors, numeric kernels and the tape.
//! - [`nn`]: parameters, the forward context and generic conv/norm/linear layers.
//! - [`layers`]: squeeze-and-excitation, feature decomposition, patch embeddings.
//! - [`blocks`]: the spatial mixer, the wave-based channel mixer and the residual block.
//! - [`model`]: configuration, network assembly, cost engine and checkpoints.
//! - [`train`]: loss, AdamW, learning-rate schedule, datasets and the epoch loop.
//!
//! The numeric kernels run data-parallel through rayon when the `parallel`
//! feature is on (the default) and sequentially otherwise. Work is split into
//! disjoint output chunks, so results are bitwise identical either way.

pub mod autograd;
pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod nn;
pub mod par;
pub mod tensor;
pub mod train;

pub use autograd::{Activation, Tape, Var};
pub use error::{Error, Result};
pub use tensor::kernels::ConvSpec;
pub use tensor::{DType, Element, Tensor};
