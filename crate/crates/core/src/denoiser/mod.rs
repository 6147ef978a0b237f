//! CrossDiT noise predictor.
//!
//! Skeleton tokens and local text tokens form two streams that attend jointly
//! inside each block, while a conditioning vector built from the timestep and
//! the global text feature modulates both streams through adaptive layer
//! norms with zero-initialized gates.

mod forward;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureDims;

pub use forward::{
    crossdit_block, denoise, embed_inputs, forward, predict, timestep_embedding, DenoiseInputs, Streams,
    TIMESTEP_BASE,
};
pub use params::{Block, DenoiserParams, Linear, Weights};

/// What the head regresses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionTarget {
    /// The injected noise `ε`.
    #[default]
    Noise,
    /// The clean skeleton feature `z_x`.
    X0,
}

/// Which text features reach the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextConditioning {
    #[default]
    Both,
    /// No local tokens: the skeleton stream attends only to itself.
    GlobalOnly,
    /// The conditioning vector carries only the timestep.
    LocalOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub dims: FeatureDims,
    #[serde(default)]
    pub prediction_target: PredictionTarget,
    #[serde(default)]
    pub text_conditioning: TextConditioning,
}

impl DenoiserConfig {
    /// Two blocks of width 64 with four heads.
    pub fn desk(dims: FeatureDims) -> Self {
        Self {
            num_blocks: 2,
            model_dim: 64,
            num_heads: 4,
            mlp_ratio: 4.0,
            dims,
            prediction_target: PredictionTarget::Noise,
            text_conditioning: TextConditioning::Both,
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.model_dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Local text tokens that actually enter attention.
    pub fn active_text_tokens(&self) -> usize {
        match self.text_conditioning {
            TextConditioning::GlobalOnly => 0,
            _ => self.dims.text_tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.num_blocks == 0 || self.model_dim == 0 || self.num_heads == 0 {
            return Err(Error::config("num_blocks, model_dim and num_heads must be positive"));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.num_heads
            )));
        }
        if !self.model_dim.is_multiple_of(2) {
            return Err(Error::config("model_dim must be even for the timestep embedding"));
        }
        if !(self.mlp_ratio > 0.0) || !self.mlp_ratio.is_finite() || self.mlp_hidden() == 0 {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        Ok(())
    }
}
