//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tdsm::denoiser::{DenoiserConfig, PredictionTarget, TextConditioning};
use tdsm::features::{FeatureDims, GeneratorConfig};
use tdsm::loss::LossConfig;
use tdsm::schedule::ScheduleConfig;
use tdsm::trainer::TrainConfig;
use tdsm::zsclassifier::InferenceConfig;

use crate::error::{io_at, CliError, CliResult};

/// Overrides `output.dir` when set.
pub const OUTPUT_ROOT_ENV: &str = "TDSM_OUTPUT_ROOT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub split: SplitSection,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserSection,
    pub loss: LossConfig,
    pub train: TrainSection,
    pub inference: InferenceConfig,
    pub sweep: SweepSection,
    pub ablation: AblationSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Bank file; relative paths resolve against the output root.
    pub bank: PathBuf,
    pub generator: GeneratorConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            bank: PathBuf::from("bank.tdsmfb"),
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub num_unseen: usize,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            num_unseen: 5,
            seed: 2025,
        }
    }
}

/// Denoiser settings; feature dims come from the bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub prediction_target: PredictionTarget,
    pub text_conditioning: TextConditioning,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let d = DenoiserConfig::desk(FeatureDims::DESK);
        Self {
            num_blocks: d.num_blocks,
            model_dim: d.model_dim,
            num_heads: d.num_heads,
            mlp_ratio: d.mlp_ratio,
            prediction_target: d.prediction_target,
            text_conditioning: d.text_conditioning,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub fixed_noise: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::desk(DenoiserConfig::desk(FeatureDims::DESK));
        Self {
            iterations: t.iterations,
            warmup_steps: t.warmup_steps,
            peak_lr: t.peak_lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            fixed_noise: t.fixed_noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub t_values: Vec<usize>,
    pub trials: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            t_values: (0..=50).step_by(5).collect(),
            trials: 10,
        }
    }
}

/// Which ablation tables to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationTable {
    /// Diffusion-only, triplet-only, both.
    Loss,
    /// Global, local or both text features.
    Text,
    /// Total diffusion steps `T`.
    Timesteps,
    /// Random versus fixed training noise.
    Noise,
}

impl AblationTable {
    pub const ALL: [AblationTable; 4] = [
        AblationTable::Loss,
        AblationTable::Text,
        AblationTable::Timesteps,
        AblationTable::Noise,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub tables: Vec<AblationTable>,
    /// Values of `T` for the timestep table.
    pub total_steps: Vec<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            tables: AblationTable::ALL.to_vec(),
            total_steps: vec![1, 10, 50, 100],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// Defaults with the small single-core feature dims.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.data.generator = GeneratorConfig::desk();
        c
    }

    pub fn parse(text: &str, origin: &Path) -> CliResult<Self> {
        toml::from_str(text).map_err(|source| CliError::Toml {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn denoiser_config(&self, dims: FeatureDims) -> DenoiserConfig {
        let d = &self.denoiser;
        DenoiserConfig {
            num_blocks: d.num_blocks,
            model_dim: d.model_dim,
            num_heads: d.num_heads,
            mlp_ratio: d.mlp_ratio,
            dims,
            prediction_target: d.prediction_target,
            text_conditioning: d.text_conditioning,
        }
    }

    pub fn train_config(&self, dims: FeatureDims) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            iterations: t.iterations,
            warmup_steps: t.warmup_steps,
            peak_lr: t.peak_lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            fixed_noise: t.fixed_noise,
            schedule: self.schedule,
            loss: self.loss.clone(),
            denoiser: self.denoiser_config(dims),
        }
    }

    /// Output root: the environment override, else `output.dir`.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output.dir.clone(),
        }
    }

    pub fn paths(&self) -> Paths {
        Paths::new(self.output_root(), &self.data.bank)
    }
}

/// Artifact locations under the output root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Paths {
    pub root: PathBuf,
    pub bank: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub eval: PathBuf,
    pub sweep: PathBuf,
    pub ablation: PathBuf,
    pub report: PathBuf,
}

impl Paths {
    pub fn new(root: PathBuf, bank: &Path) -> Self {
        let bank = if bank.is_absolute() { bank.to_path_buf() } else { root.join(bank) };
        Self {
            bank,
            checkpoint: root.join("checkpoint.tdsmck"),
            metrics: root.join("metrics.jsonl"),
            eval: root.join("eval.json"),
            sweep: root.join("sweep.csv"),
            ablation: root.join("ablation.json"),
            report: root.join("report.md"),
            root,
        }
    }

    /// Periodic checkpoint written at `step`.
    pub fn checkpoint_at(&self, step: usize) -> PathBuf {
        self.root.join(format!("checkpoint.step{step}.tdsmck"))
    }
}
