//! `TDSMCK01` checkpoint format.
//!
//! ```text
//! magic "TDSMCK01" | version u32 | metadata JSON (u32 len + bytes: config and split)
//! | step u64 | parameter count u64 | params f64[n] | optimizer step u64
//! | m f64[n] | v f64[n] | 4 x rng stream (seed u64, stream u64, word position u128)
//! ```
//!
//! Little-endian; parameters follow the denoiser's canonical flat order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimizerState, TrainConfig};
use crate::binio::{Reader, Writer};
use crate::denoiser::DenoiserParams;
use crate::error::{Error, Result};
use crate::features::SplitSpec;
use crate::rng::StreamState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TDSMCK01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Positions of the four training streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStates {
    pub data: StreamState,
    pub timestep: StreamState,
    pub noise: StreamState,
    pub negative: StreamState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub split: SplitSpec,
    pub step: usize,
    pub params: DenoiserParams,
    pub optimizer: OptimizerState,
    pub rng: RngStates,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: TrainConfig,
    split: SplitSpec,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let n = ck.params.num_scalars();
    if ck.optimizer.m.len() != n || ck.optimizer.v.len() != n {
        return Err(Error::contract("optimizer moments do not match the parameter count"));
    }
    let meta = serde_json::to_vec(&Meta {
        config: ck.config.clone(),
        split: ck.split.clone(),
    })?;
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.blob(&meta);
    w.u64(ck.step as u64);
    w.u64(n as u64);
    w.f64s(&ck.params.flatten());
    w.u64(ck.optimizer.step);
    w.f64s(&ck.optimizer.m);
    w.f64s(&ck.optimizer.v);
    for s in [ck.rng.data, ck.rng.timestep, ck.rng.noise, ck.rng.negative] {
        w.u64(s.seed);
        w.u64(s.stream);
        w.u128(s.word_pos);
    }
    Ok(w.finish())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            at,
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let at = r.offset();
    let meta: Meta = serde_json::from_slice(r.blob("metadata")?)
        .map_err(|e| Error::format(at, format!("bad metadata: {e}")))?;
    let step = r.u64("step")? as usize;
    let at = r.offset();
    let n = r.u64("parameter count")? as usize;
    let template = DenoiserParams::zeros(&meta.config.denoiser).map_err(|e| Error::format(at, e.to_string()))?;
    if n != template.num_scalars() {
        return Err(Error::format(
            at,
            format!("{n} parameters stored, config implies {}", template.num_scalars()),
        ));
    }
    let params = template.unflatten(&r.f64s(n, "parameters")?)?;
    let optimizer = OptimizerState {
        step: r.u64("optimizer step")?,
        m: r.f64s(n, "first moments")?,
        v: r.f64s(n, "second moments")?,
    };
    let mut streams = [StreamState {
        seed: 0,
        stream: 0,
        word_pos: 0,
    }; 4];
    for s in &mut streams {
        s.seed = r.u64("rng seed")?;
        s.stream = r.u64("rng stream")?;
        s.word_pos = r.u128("rng position")?;
    }
    r.finish()?;
    Ok(Checkpoint {
        config: meta.config,
        split: meta.split,
        step,
        params,
        optimizer,
        rng: RngStates {
            data: streams[0],
            timestep: streams[1],
            noise: streams[2],
            negative: streams[3],
        },
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
