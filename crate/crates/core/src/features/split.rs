use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FeatureBank;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Disjoint seen/unseen class partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seen: BTreeSet<u32>,
    pub unseen: BTreeSet<u32>,
    pub seed: u64,
}

impl SplitSpec {
    /// Checks disjointness, non-emptiness and that both sets lie in the bank.
    pub fn validate(&self, bank: &FeatureBank) -> Result<()> {
        if self.seen.is_empty() || self.unseen.is_empty() {
            return Err(Error::config("seen and unseen class sets must be non-empty"));
        }
        if let Some(c) = self.seen.intersection(&self.unseen).next() {
            return Err(Error::config(format!("class {c} is both seen and unseen")));
        }
        let ids: BTreeSet<u32> = bank.class_ids().into_iter().collect();
        if let Some(c) = self.seen.union(&self.unseen).find(|c| !ids.contains(c)) {
            return Err(Error::config(format!("split refers to class {c} absent from the bank")));
        }
        Ok(())
    }
}

/// Uniformly random partition with `num_unseen` unseen classes.
pub fn make_split(bank: &FeatureBank, num_unseen: usize, seed: u64) -> Result<SplitSpec> {
    let n = bank.classes.len();
    if num_unseen < 1 || num_unseen + 1 > n {
        return Err(Error::config(format!(
            "num_unseen must be in 1..={}, got {num_unseen}",
            n.saturating_sub(1)
        )));
    }
    let mut ids = bank.class_ids();
    ids.sort_unstable();
    ids.shuffle(&mut stream_rng(seed, Stream::Split));
    let split = SplitSpec {
        unseen: ids[..num_unseen].iter().copied().collect(),
        seen: ids[num_unseen..].iter().copied().collect(),
        seed,
    };
    split.validate(bank)?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_synthetic_bank, GeneratorConfig};

    fn bank() -> FeatureBank {
        generate_synthetic_bank(&GeneratorConfig {
            samples_per_class: 2,
            ..GeneratorConfig::desk()
        })
        .unwrap()
    }

    #[test]
    fn ten_five_split() {
        let b = bank();
        let s = make_split(&b, 5, 2025).unwrap();
        assert_eq!((s.seen.len(), s.unseen.len()), (10, 5));
        assert!(s.seen.is_disjoint(&s.unseen));
        assert_eq!(s.seen.union(&s.unseen).count(), 15);
        assert_eq!(s, make_split(&b, 5, 2025).unwrap());
        assert_ne!(s.unseen, make_split(&b, 5, 2026).unwrap().unseen);
    }

    #[test]
    fn out_of_range_counts() {
        let b = bank();
        assert!(matches!(make_split(&b, 15, 1), Err(Error::Config(_))));
        assert!(make_split(&b, 0, 1).is_err());
        assert!(make_split(&b, 14, 1).is_ok());
    }

    #[test]
    fn validate_catches_overlap() {
        let b = bank();
        let mut s = make_split(&b, 3, 1).unwrap();
        let c = *s.unseen.iter().next().unwrap();
        s.seen.insert(c);
        assert!(s.validate(&b).is_err());
    }

    #[test]
    fn unseen_membership_is_roughly_uniform() {
        let b = bank();
        let mut counts = [0usize; 15];
        let trials = 3000;
        for seed in 0..trials {
            for c in make_split(&b, 5, seed).unwrap().unseen {
                counts[c as usize] += 1;
            }
        }
        let p = 5.0 / 15.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - trials as f64 * p).abs() < 5.0 * sigma);
        }
    }
}
