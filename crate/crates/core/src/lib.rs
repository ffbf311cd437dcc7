//! Score-based diffusion for tensor data with low Tucker rank.
//!
//! The crate covers synthetic data generation from tensor factor models,
//! denoising score matching with a Tucker-structured score network,
//! reverse-time sampling, analytic Gaussian score oracles and the
//! subspace/core-distribution metrics used to evaluate generated tensors.

pub mod checks;
pub mod cli;
pub mod diffusion;
pub mod error;
pub mod factor_model;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod trainer;
pub mod tucker_unet;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::Rng;
pub use tensor::{DenseTensor, TensorShape};
