//! Text-conditional denoising diffusion for scene-text super-resolution,
//! plus a three-role framework (synthesizer, super-resolver, degrader) for
//! building LR-HR paired text-image datasets with recognition-based
//! filtering. Everything runs on the CPU on a small fixed operation set
//! with reverse-mode differentiation.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod ctc;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod nn;
pub mod denoiser;
pub mod diffusion;
pub mod text;
pub mod manifest;
pub mod metrics;
pub mod module;
pub mod optim;
pub mod pipeline;
pub mod recognizer;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dtype, Real, Tensor};
