//! AdamW training with linear warmup and cosine decay.

mod checkpoint;
mod optim;

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, RngStates, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adamw_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::denoiser::{self, DenoiseInputs, DenoiserConfig, DenoiserParams, PredictionTarget};
use crate::diffcore::Graph;
use crate::error::{Error, Result};
use crate::features::{FeatureBank, SplitSpec};
use crate::loss::{self, sample_negative, LossConfig};
use crate::rng::{stream_rng, Stream, StreamState};
use crate::schedule::{q_sample_with, NoiseSchedule, ScheduleConfig};
use crate::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    /// Items per step; each is evaluated with positive and negative text.
    pub batch_size: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Reuse one frozen noise draw for every item of every step.
    #[serde(default)]
    pub fixed_noise: bool,
    pub schedule: ScheduleConfig,
    pub loss: LossConfig,
    pub denoiser: DenoiserConfig,
}

impl TrainConfig {
    /// Single-core profile: 2000 steps of 64 items.
    pub fn desk(denoiser: DenoiserConfig) -> Self {
        Self {
            iterations: 2000,
            warmup_steps: 100,
            peak_lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 64,
            seed: 2025,
            checkpoint_every: 0,
            fixed_noise: false,
            schedule: ScheduleConfig::default(),
            loss: LossConfig::default(),
            denoiser,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.warmup_steps >= self.iterations {
            return Err(Error::config(format!(
                "need 0 <= warmup_steps < iterations, got {} / {}",
                self.warmup_steps, self.iterations
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.peak_lr > 0.0) || !self.peak_lr.is_finite() {
            return Err(Error::config("peak_lr must be positive"));
        }
        if !(self.weight_decay >= 0.0) || self.peak_lr * self.weight_decay >= 1.0 {
            return Err(Error::config("weight_decay must be non-negative with lr*wd < 1"));
        }
        self.loss.validate()?;
        self.denoiser.validate()?;
        self.schedule.build()?;
        Ok(())
    }
}

/// Learning rate at `step` in `0..=iterations`: a linear ramp to `peak_lr`
/// over `warmup_steps`, then a half cosine down to 0 at `iterations`.
/// Update `k` (counting from 1) uses `lr_at(k)`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let (n, w, peak) = (cfg.iterations as f64, cfg.warmup_steps as f64, cfg.peak_lr);
    let s = step.min(cfg.iterations) as f64;
    if s <= w && cfg.warmup_steps > 0 {
        return peak * s / w;
    }
    let progress = (s - w) / (n - w);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Losses of one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub l_diff: f64,
    /// Absent in diffusion-only training.
    pub l_td: Option<f64>,
    pub lr: f64,
}

/// A training run over the seen classes of one split.
pub struct Trainer {
    config: TrainConfig,
    split: SplitSpec,
    bank: FeatureBank,
    seen: Vec<u32>,
    schedule: NoiseSchedule,
    params: DenoiserParams,
    optimizer: OptimizerState,
    step: usize,
    data_rng: ChaCha8Rng,
    timestep_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    negative_rng: ChaCha8Rng,
    fixed_eps: Option<Tensor>,
}

impl Trainer {
    /// Fresh run. The trainer keeps only the seen-class part of `bank`.
    pub fn new(bank: &FeatureBank, split: &SplitSpec, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = DenoiserParams::init(&config.denoiser, config.seed)?;
        let optimizer = OptimizerState::new(params.num_scalars());
        let seed = config.seed;
        let rngs = RngStates {
            data: StreamState::capture(seed, &stream_rng(seed, Stream::Data)),
            timestep: StreamState::capture(seed, &stream_rng(seed, Stream::Timestep)),
            noise: StreamState::capture(seed, &stream_rng(seed, Stream::Noise)),
            negative: StreamState::capture(seed, &stream_rng(seed, Stream::Negative)),
        };
        Self::assemble(bank, split, config.clone(), params, optimizer, 0, &rngs)
    }

    /// Continues a run from a checkpoint.
    pub fn resume(bank: &FeatureBank, ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        Self::assemble(
            bank,
            &ckpt.split,
            ckpt.config.clone(),
            ckpt.params.clone(),
            ckpt.optimizer.clone(),
            ckpt.step,
            &ckpt.rng,
        )
    }

    fn assemble(
        bank: &FeatureBank,
        split: &SplitSpec,
        config: TrainConfig,
        params: DenoiserParams,
        optimizer: OptimizerState,
        step: usize,
        rng: &RngStates,
    ) -> Result<Self> {
        split.validate(bank)?;
        if bank.dims != config.denoiser.dims {
            return Err(Error::config(format!(
                "bank dims {:?} differ from denoiser dims {:?}",
                bank.dims, config.denoiser.dims
            )));
        }
        params.check_shapes(&config.denoiser)?;
        let bank = bank.subset(&split.seen);
        let seen = bank.class_ids();
        if seen.len() < 2 && config.loss.use_td {
            return Err(Error::config("triplet training needs at least two seen classes"));
        }
        if bank.samples.is_empty() {
            return Err(Error::config("no training samples in the seen classes"));
        }
        let d = config.denoiser.dims;
        let fixed_eps = config.fixed_noise.then(|| {
            Tensor::randn(d.skeleton_tokens, d.skeleton_dim, &mut stream_rng(config.seed, Stream::FixedNoise))
        });
        Ok(Self {
            schedule: config.schedule.build()?,
            split: split.clone(),
            bank,
            seen,
            params,
            optimizer,
            step,
            data_rng: rng.data.restore(),
            timestep_rng: rng.timestep.restore(),
            noise_rng: rng.noise.restore(),
            negative_rng: rng.negative.restore(),
            fixed_eps,
            config,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.iterations
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Classes the trainer draws from.
    pub fn seen_classes(&self) -> BTreeSet<u32> {
        self.seen.iter().copied().collect()
    }

    /// Snapshot of everything needed to continue bit-identically.
    pub fn checkpoint(&self) -> Checkpoint {
        let seed = self.config.seed;
        Checkpoint {
            config: self.config.clone(),
            split: self.split.clone(),
            step: self.step,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            rng: RngStates {
                data: StreamState::capture(seed, &self.data_rng),
                timestep: StreamState::capture(seed, &self.timestep_rng),
                noise: StreamState::capture(seed, &self.noise_rng),
                negative: StreamState::capture(seed, &self.negative_rng),
            },
        }
    }

    /// One update: sample a batch from the seen classes, noise it, predict
    /// with positive and (if needed) negative text in a single pass, and
    /// apply AdamW.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        use rand::Rng;

        if self.is_done() {
            return Err(Error::contract("training already finished"));
        }
        let cfg = &self.config;
        let d = cfg.denoiser.dims;
        let b = cfg.batch_size;
        let with_neg = cfg.loss.use_td;

        let mut z_t = Vec::with_capacity(b);
        let mut targets = Vec::with_capacity(b);
        let mut timesteps = Vec::with_capacity(b);
        let mut pos = Vec::with_capacity(b);
        let mut neg = Vec::with_capacity(b);
        for _ in 0..b {
            let s = &self.bank.samples[self.data_rng.random_range(0..self.bank.samples.len())];
            let t = self.schedule.sample_timestep(&mut self.timestep_rng);
            let eps = match &self.fixed_eps {
                Some(e) => e.clone(),
                None => Tensor::randn(d.skeleton_tokens, d.skeleton_dim, &mut self.noise_rng),
            };
            z_t.push(q_sample_with(&s.skeleton, self.schedule.alpha_bar(t)?, &eps)?);
            targets.push(match cfg.denoiser.prediction_target {
                PredictionTarget::Noise => eps,
                PredictionTarget::X0 => s.skeleton.clone(),
            });
            timesteps.push(t);
            pos.push(s.class_id);
            if with_neg {
                neg.push(sample_negative(s.class_id, &self.seen, &mut self.negative_rng)?);
            }
        }

        let mut labels = pos;
        labels.extend_from_slice(&neg);
        let passes = labels.len() / b;
        let class = |id: u32| self.bank.class(id).expect("seen class present");
        let global = Tensor::vstack(&labels.iter().map(|&c| &class(c).global).collect::<Vec<_>>())?;
        let local_data: Vec<f64> = labels.iter().flat_map(|&c| class(c).local.data().to_vec()).collect();
        let local = Tensor::matrix(labels.len() * d.text_tokens, d.text_dim, local_data)?;
        let z_refs: Vec<&Tensor> = z_t.iter().collect();
        let z_once = Tensor::vstack(&z_refs)?;
        let z_all = if passes == 2 { Tensor::vstack(&[&z_once, &z_once])? } else { z_once };
        let ts_all: Vec<usize> = timesteps.iter().copied().cycle().take(labels.len()).collect();
        let target = Tensor::vstack(&targets.iter().collect::<Vec<_>>())?;

        let step_no = self.step + 1;
        let at_step = |e: Error| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("step {step_no}: {m}")),
            other => other,
        };
        let mut g = Graph::new();
        let w = self.params.bind(&mut g, true)?;
        let inp = DenoiseInputs::constants(&mut g, &cfg.denoiser, &z_all, &ts_all, &global, &local)?;
        let y = denoiser::forward(&mut g, &w, &cfg.denoiser, &inp).map_err(at_step)?;
        let rows = b * d.skeleton_tokens;
        let (pred_pos, pred_neg) = if passes == 2 {
            (g.slice_rows(y, 0, rows)?, Some(g.slice_rows(y, rows, rows)?))
        } else {
            (y, None)
        };
        let tgt = g.constant(target)?;
        let terms = loss::total_loss(&mut g, tgt, pred_pos, pred_neg, &cfg.loss, d.skeleton_tokens).map_err(at_step)?;
        let grads = g.backward(terms.total).map_err(at_step)?;
        let grad_flat = DenoiserParams::gradients(&w, &grads)?.flatten();
        if grad_flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("step {step_no}: gradient")));
        }

        let lr = lr_at(step_no, cfg);
        let mut flat = self.params.flatten();
        adamw_step(&mut flat, &grad_flat, &mut self.optimizer, lr, cfg.weight_decay)?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("step {step_no}: parameters")));
        }
        self.params = self.params.unflatten(&flat)?;
        self.step = step_no;
        Ok(StepMetrics {
            step: step_no,
            loss: g.value(terms.total).item()?,
            l_diff: g.value(terms.diff).item()?,
            l_td: terms.td.map(|v| g.value(v).item()).transpose()?,
            lr,
        })
    }

    /// Steps until `iterations`, handing every step's metrics to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(&Trainer, &StepMetrics) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let m = self.train_step()?;
            on_step(self, &m)?;
        }
        Ok(())
    }
}

/// Trains a fresh model to completion.
pub fn train(bank: &FeatureBank, split: &SplitSpec, config: &TrainConfig) -> Result<Checkpoint> {
    let mut t = Trainer::new(bank, split, config)?;
    t.run(|_, _| Ok(()))?;
    Ok(t.checkpoint())
}

#[cfg(test)]
mod tests;
