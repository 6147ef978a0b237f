//! `TDSMFB01` binary bank format.
//!
//! ```text
//! magic "TDSMFB01" | version u32 | M_x u32 | C_sk u32 | M_l u32 | C_txt u32
//! | class count u32 | sample count u32 | generator seed u64 (0 = absent)
//! | classes: id u32, name len u16, name UTF-8, z_g f32[C_txt], z_l f32[M_l*C_txt]
//! | samples: id u32, class u32, z_x f32[M_x*C_sk]
//! ```
//!
//! Everything little-endian.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassRecord, FeatureBank, FeatureDims, SampleRecord};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::Tensor;

pub const BANK_MAGIC: &[u8; 8] = b"TDSMFB01";
pub const BANK_VERSION: u32 = 1;

/// Human-readable summary written next to every bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub magic: String,
    pub version: u32,
    pub dims: FeatureDims,
    pub num_classes: usize,
    pub num_samples: usize,
    pub generator_seed: Option<u64>,
    pub classes: Vec<ManifestClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestClass {
    pub class_id: u32,
    pub name: String,
    pub samples: usize,
}

impl BankManifest {
    pub fn of(bank: &FeatureBank) -> Self {
        Self {
            magic: String::from_utf8_lossy(BANK_MAGIC).into_owned(),
            version: BANK_VERSION,
            dims: bank.dims,
            num_classes: bank.classes.len(),
            num_samples: bank.samples.len(),
            generator_seed: bank.generator_seed,
            classes: bank
                .classes
                .iter()
                .map(|c| ManifestClass {
                    class_id: c.class_id,
                    name: c.name.clone(),
                    samples: bank.samples.iter().filter(|s| s.class_id == c.class_id).count(),
                })
                .collect(),
        }
    }
}

/// `bank.tdsmfb` -> `bank.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

pub fn encode_bank(bank: &FeatureBank) -> Result<Vec<u8>> {
    bank.validate()?;
    let d = bank.dims;
    let mut w = Writer::new();
    w.bytes(BANK_MAGIC);
    w.u32(BANK_VERSION);
    for v in [d.skeleton_tokens, d.skeleton_dim, d.text_tokens, d.text_dim] {
        w.u32(to_u32(v, "dimension")?);
    }
    w.u32(to_u32(bank.classes.len(), "class count")?);
    w.u32(to_u32(bank.samples.len(), "sample count")?);
    w.u64(bank.generator_seed.unwrap_or(0));
    for c in &bank.classes {
        w.u32(c.class_id);
        w.u16(c.name.len() as u16);
        w.bytes(c.name.as_bytes());
        w.f32s(c.global.data());
        w.f32s(c.local.data());
    }
    for s in &bank.samples {
        w.u32(s.sample_id);
        w.u32(s.class_id);
        w.f32s(s.skeleton.data());
    }
    Ok(w.finish())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::contract(format!("{what} {v} does not fit in u32")))
}

pub fn decode_bank(bytes: &[u8]) -> Result<FeatureBank> {
    let mut r = Reader::new(bytes);
    r.expect_magic(BANK_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != BANK_VERSION {
        return Err(Error::format(at, format!("unsupported version {version}, expected {BANK_VERSION}")));
    }
    let at = r.offset();
    let dims = FeatureDims {
        skeleton_tokens: r.u32("M_x")? as usize,
        skeleton_dim: r.u32("C_sk")? as usize,
        text_tokens: r.u32("M_l")? as usize,
        text_dim: r.u32("C_txt")? as usize,
    };
    dims.validate().map_err(|e| Error::format(at, e.to_string()))?;
    let n_classes = r.u32("class count")? as usize;
    let n_samples = r.u32("sample count")? as usize;
    let seed = r.u64("generator seed")?;

    let mut classes = Vec::with_capacity(n_classes.min(1 << 16));
    for i in 0..n_classes {
        let class_id = r.u32("class id")?;
        let name_len = r.u16("class name length")? as usize;
        let at = r.offset();
        let name = std::str::from_utf8(r.take(name_len, "class name")?)
            .map_err(|_| Error::format(at, format!("class {i} name is not UTF-8")))?
            .to_owned();
        let global = Tensor::matrix(1, dims.text_dim, r.f32s(dims.text_dim, "z_g")?)?;
        let local = Tensor::matrix(
            dims.text_tokens,
            dims.text_dim,
            r.f32s(dims.text_tokens * dims.text_dim, "z_l")?,
        )?;
        classes.push(ClassRecord {
            class_id,
            name,
            global,
            local,
        });
    }
    let mut samples = Vec::with_capacity(n_samples.min(1 << 20));
    for _ in 0..n_samples {
        let sample_id = r.u32("sample id")?;
        let class_id = r.u32("sample class")?;
        let skeleton = Tensor::matrix(
            dims.skeleton_tokens,
            dims.skeleton_dim,
            r.f32s(dims.skeleton_tokens * dims.skeleton_dim, "z_x")?,
        )?;
        samples.push(SampleRecord {
            sample_id,
            class_id,
            skeleton,
        });
    }
    r.finish()?;

    let bank = FeatureBank {
        classes,
        samples,
        dims,
        generator_seed: (seed != 0).then_some(seed),
    };
    bank.validate()
        .map_err(|e| Error::format(bytes.len() as u64, format!("invalid bank: {e}")))?;
    Ok(bank)
}

/// Writes the bank and its `.manifest.json` sidecar.
pub fn save_bank(bank: &FeatureBank, path: &Path) -> Result<()> {
    let bytes = encode_bank(bank)?;
    std::fs::write(path, bytes)?;
    let manifest = serde_json::to_string_pretty(&BankManifest::of(bank))?;
    std::fs::write(manifest_path(path), manifest + "\n")?;
    Ok(())
}

pub fn load_bank(path: &Path) -> Result<FeatureBank> {
    decode_bank(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_synthetic_bank, GeneratorConfig};

    fn bank() -> FeatureBank {
        generate_synthetic_bank(&GeneratorConfig {
            num_classes: 4,
            samples_per_class: 3,
            ..GeneratorConfig::desk()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.tdsmfb");
        let b = bank();
        save_bank(&b, &path).unwrap();
        let back = load_bank(&path).unwrap();
        assert_eq!(back, b);
        for (x, y) in back.samples.iter().zip(&b.samples) {
            assert!(x.skeleton.bit_eq(&y.skeleton));
        }
        let manifest: BankManifest =
            serde_json::from_str(&std::fs::read_to_string(manifest_path(&path)).unwrap()).unwrap();
        assert_eq!(manifest, BankManifest::of(&b));
    }

    #[test]
    fn header_layout() {
        let b = bank();
        let bytes = encode_bank(&b).unwrap();
        assert_eq!(&bytes[..8], b"TDSMFB01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let dims: Vec<u32> = (0..4)
            .map(|i| u32::from_le_bytes(bytes[12 + 4 * i..16 + 4 * i].try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![1, 32, 8, 64]);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[32..36].try_into().unwrap()), 12);
        assert_eq!(u64::from_le_bytes(bytes[36..44].try_into().unwrap()), 2025);
        let class_bytes = 4 + 2 + "action_000".len() + 4 * 64 + 4 * 8 * 64;
        let sample_bytes = 4 + 4 + 4 * 32;
        assert_eq!(bytes.len(), 44 + 4 * class_bytes + 12 * sample_bytes);
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let bytes = encode_bank(&bank()).unwrap();
        for cut in [0, 5, 20, 44, 100, bytes.len() - 1] {
            match decode_bank(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_bank(&bank()).unwrap();
        bytes[8] = 2;
        assert!(matches!(decode_bank(&bytes), Err(Error::Format { offset: 8, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_bank(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn declared_sample_count_must_match() {
        let mut bytes = encode_bank(&bank()).unwrap();
        bytes[32..36].copy_from_slice(&13u32.to_le_bytes());
        assert!(matches!(decode_bank(&bytes), Err(Error::Format { .. })));
        bytes[32..36].copy_from_slice(&11u32.to_le_bytes());
        let err = decode_bank(&bytes).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn unknown_class_reference_is_rejected() {
        let mut b = bank();
        b.samples[0].class_id = 99;
        assert!(encode_bank(&b).is_err());
        let bytes = encode_bank(&bank()).unwrap();
        let first_sample = bytes.len() - 12 * (4 + 4 + 4 * 32);
        let mut bad = bytes.clone();
        bad[first_sample + 4..first_sample + 8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(decode_bank(&bad), Err(Error::Format { .. })));
    }
}
