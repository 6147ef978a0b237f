//! Feature banks standing in for frozen skeleton and text encoders.
//!
//! A bank holds one skeleton feature per sample (`M_x x C_sk`) and, per class,
//! a global text feature (`1 x C_txt`) and local text features
//! (`M_l x C_txt`).

mod format;
mod generate;
mod split;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::Tensor;

pub use format::{load_bank, manifest_path, save_bank, BankManifest, BANK_MAGIC, BANK_VERSION};
pub use generate::{
    generate_synthetic_bank, generate_with_prototypes, nearest_prototype_accuracy, separation_stats,
    GeneratorConfig, SeparationStats, LATENT_DIM,
};
pub use split::{make_split, SplitSpec};

/// Token counts and channel widths of the skeleton and text features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDims {
    /// `M_x`
    pub skeleton_tokens: usize,
    /// `C_sk`
    pub skeleton_dim: usize,
    /// `M_l`
    pub text_tokens: usize,
    /// `C_txt`
    pub text_dim: usize,
}

impl FeatureDims {
    /// Shapes produced by the reference encoders.
    pub const REFERENCE: FeatureDims = FeatureDims {
        skeleton_tokens: 1,
        skeleton_dim: 256,
        text_tokens: 35,
        text_dim: 1024,
    };

    /// Small profile that trains in minutes on one core.
    pub const DESK: FeatureDims = FeatureDims {
        skeleton_tokens: 1,
        skeleton_dim: 32,
        text_tokens: 8,
        text_dim: 64,
    };

    pub fn validate(&self) -> Result<()> {
        if self.skeleton_tokens == 0 || self.skeleton_dim == 0 || self.text_dim == 0 {
            return Err(Error::config(format!("feature dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRecord {
    pub class_id: u32,
    pub name: String,
    /// `z_g`, `1 x C_txt`.
    pub global: Tensor,
    /// `z_l`, `M_l x C_txt`.
    pub local: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: u32,
    pub class_id: u32,
    /// `z_x`, `M_x x C_sk`.
    pub skeleton: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    pub classes: Vec<ClassRecord>,
    pub samples: Vec<SampleRecord>,
    pub dims: FeatureDims,
    /// Seed of the synthetic generator, if the bank came from one. Seed 0 is
    /// indistinguishable from "absent" on disk and is stored as `None`.
    pub generator_seed: Option<u64>,
}

impl FeatureBank {
    pub fn class(&self, id: u32) -> Option<&ClassRecord> {
        self.classes.iter().find(|c| c.class_id == id)
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.class_id).collect()
    }

    /// Samples whose class is in `classes`, in bank order.
    pub fn samples_in<'a>(&'a self, classes: &'a BTreeSet<u32>) -> impl Iterator<Item = &'a SampleRecord> + 'a {
        self.samples.iter().filter(move |s| classes.contains(&s.class_id))
    }

    /// Checks shapes, id uniqueness and that every sample's class exists.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let d = self.dims;
        let mut ids = BTreeSet::new();
        for c in &self.classes {
            if !ids.insert(c.class_id) {
                return Err(Error::contract(format!("duplicate class id {}", c.class_id)));
            }
            if (c.global.rows(), c.global.cols()) != (1, d.text_dim) {
                return Err(shape_err!("class {} global feature {:?}", c.class_id, c.global.shape()));
            }
            if c.local.len() != d.text_tokens * d.text_dim {
                return Err(shape_err!("class {} local feature {:?}", c.class_id, c.local.shape()));
            }
            if c.name.len() > u16::MAX as usize {
                return Err(Error::contract(format!("class {} name too long", c.class_id)));
            }
        }
        let mut sample_ids = BTreeSet::new();
        for s in &self.samples {
            if !sample_ids.insert(s.sample_id) {
                return Err(Error::contract(format!("duplicate sample id {}", s.sample_id)));
            }
            if !ids.contains(&s.class_id) {
                return Err(Error::contract(format!(
                    "sample {} refers to unknown class {}",
                    s.sample_id, s.class_id
                )));
            }
            if (s.skeleton.rows(), s.skeleton.cols()) != (d.skeleton_tokens, d.skeleton_dim) {
                return Err(shape_err!("sample {} skeleton feature {:?}", s.sample_id, s.skeleton.shape()));
            }
        }
        Ok(())
    }

    /// The bank restricted to `classes`: both the class table and samples.
    pub fn subset(&self, classes: &BTreeSet<u32>) -> FeatureBank {
        FeatureBank {
            classes: self
                .classes
                .iter()
                .filter(|c| classes.contains(&c.class_id))
                .cloned()
                .collect(),
            samples: self.samples_in(classes).cloned().collect(),
            dims: self.dims,
            generator_seed: self.generator_seed,
        }
    }
}
