//! Diffusion-based alignment of skeleton and text features for zero-shot
//! action recognition, on synthetic feature banks.

mod binio;
pub mod denoiser;
pub mod diffcore;
pub mod error;
pub mod features;
pub mod loss;
pub mod rng;
pub mod schedule;
pub mod trainer;
pub mod zsclassifier;

pub use diffcore::Tensor;
pub use error::{Error, Result};
