//! Neuron visualization toolkit: regularized activation maximization and
//! multifaceted feature visualization on a small convolutional network.
//!
//! All numeric code is generic over [`Scalar`] (implemented for `f32` and
//! `f64`). Storage uses the chosen scalar; reductions accumulate in `f64`.
//! The aliases at the crate root fix the scalar to `f32`, which is what the
//! pipeline and the command-line tool use.

pub mod actmax;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod facets;
pub mod imageio;
pub mod network;
pub mod priors;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

/// Rank-3 image (height × width × channels) of 32-bit reals.
pub type ImageTensor = tensor::Tensor<f32>;
/// The micro-CNN with 32-bit weights.
pub type Network = network::Network<f32>;
/// Activation-maximization settings over 32-bit images.
pub type AMConfig = actmax::AMConfig<f32>;
/// Activation-maximization output over 32-bit images.
pub type AMResult = actmax::AMResult<f32>;
/// A labeled image collection with 32-bit pixels.
pub type LabeledDataset = dataset::LabeledDataset<f32>;
/// Output of the multifaceted pipeline with 32-bit images.
pub type FacetSet = facets::FacetSet<f32>;
