//! Super-resolution of time-varying 3D scientific fields with a
//! degradation-aware contrastive encoder and a windowed-attention
//! conditional diffusion model.

pub mod autograd;
pub mod denoiser;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod keyframe;
pub mod metrics;
pub mod nn;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
