//! The commands behind each CLI verb.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tdsm::denoiser::TextConditioning;
use tdsm::features::{generate_synthetic_bank, load_bank, make_split, save_bank, FeatureBank, SplitSpec};
use tdsm::loss::LossMode;
use tdsm::trainer::{load_checkpoint, save_checkpoint, Checkpoint, StepMetrics, TrainConfig, Trainer};
use tdsm::zsclassifier::{evaluate_split, sweep_csv, sweep_t_test, DenoiserModel, EvalReport, InferenceConfig, SweepRow};

use crate::config::{AblationTable, ExperimentConfig, Paths};
use crate::error::{core_at, io_at, CliError, CliResult};

fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    create_parent(path)?;
    std::fs::write(path, contents).map_err(io_at(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(tdsm::Error::from)?;
    write_file(path, text + "\n")
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    Ok(serde_json::from_str(&text).map_err(tdsm::Error::from)?)
}

pub fn read_bank(paths: &Paths) -> CliResult<FeatureBank> {
    load_bank(&paths.bank).map_err(core_at(&paths.bank))
}

pub fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    load_checkpoint(path).map_err(core_at(path))
}

/// Generates the bank and writes it with its manifest.
pub fn gen_data(cfg: &ExperimentConfig, paths: &Paths) -> CliResult<FeatureBank> {
    let bank = generate_synthetic_bank(&cfg.data.generator)?;
    create_parent(&paths.bank)?;
    save_bank(&bank, &paths.bank).map_err(core_at(&paths.bank))?;
    Ok(bank)
}

/// The split the config asks for on `bank`.
pub fn split_for(cfg: &ExperimentConfig, bank: &FeatureBank) -> CliResult<SplitSpec> {
    Ok(make_split(bank, cfg.split.num_unseen, cfg.split.seed)?)
}

/// Final metrics of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub last: Option<StepMetrics>,
}

/// Trains (or resumes) and writes checkpoints plus one JSON line per step.
pub fn train(cfg: &ExperimentConfig, paths: &Paths, resume: Option<&Path>) -> CliResult<(Checkpoint, TrainSummary)> {
    let bank = read_bank(paths)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = read_checkpoint(p)?;
            Trainer::resume(&bank, &ck)?
        }
        None => {
            let split = split_for(cfg, &bank)?;
            Trainer::new(&bank, &split, &cfg.train_config(bank.dims))?
        }
    };
    create_parent(&paths.metrics)?;
    let file = if resume.is_some() {
        File::options().create(true).append(true).open(&paths.metrics)
    } else {
        File::create(&paths.metrics)
    }
    .map_err(io_at(&paths.metrics))?;
    let mut metrics = BufWriter::new(file);
    let every = trainer.config().checkpoint_every;
    let mut last = None;
    let mut sink_err: Option<CliError> = None;
    let result = trainer.run(|t, m| {
        let line = serde_json::to_string(m)?;
        if let Err(e) = writeln!(metrics, "{line}") {
            sink_err = Some(io_at(&paths.metrics)(e));
            return Err(tdsm::Error::Io(std::io::Error::other("metrics sink failed")));
        }
        if every > 0 && m.step % every == 0 && !t.is_done() {
            save_checkpoint(&t.checkpoint(), &paths.checkpoint_at(m.step))?;
        }
        last = Some(m.clone());
        Ok(())
    });
    if let Some(e) = sink_err {
        return Err(e);
    }
    metrics.flush().map_err(io_at(&paths.metrics))?;
    result.map_err(core_at(&paths.checkpoint))?;
    let ck = trainer.checkpoint();
    save_checkpoint(&ck, &paths.checkpoint).map_err(core_at(&paths.checkpoint))?;
    Ok((ck, TrainSummary { steps: trainer.step(), last }))
}

/// Checks that the checkpoint's split is the one the config describes.
fn check_split(cfg: &ExperimentConfig, bank: &FeatureBank, ck: &Checkpoint) -> CliResult<()> {
    let expected = split_for(cfg, bank)?;
    if expected != ck.split {
        return Err(CliError::Config(format!(
            "checkpoint was trained on split (seen {:?}, unseen {:?}) but the config gives (seen {:?}, unseen {:?})",
            ck.split.seen, ck.split.unseen, expected.seen, expected.unseen
        )));
    }
    ck.split.validate(bank)?;
    Ok(())
}

/// Evaluates a trained model on the unseen classes of its split.
pub fn evaluate(
    bank: &FeatureBank,
    ck: &Checkpoint,
    inference: &InferenceConfig,
    confusion: bool,
) -> CliResult<EvalReport> {
    let schedule = ck.config.schedule.build()?;
    let model = DenoiserModel {
        params: &ck.params,
        config: &ck.config.denoiser,
    };
    let mut report = evaluate_split(&model, bank, &ck.split, &schedule, inference)?;
    if !confusion {
        report.confusion = None;
    }
    Ok(report)
}

pub fn eval(cfg: &ExperimentConfig, paths: &Paths, checkpoint: &Path, confusion: bool) -> CliResult<EvalReport> {
    let bank = read_bank(paths)?;
    let ck = read_checkpoint(checkpoint)?;
    check_split(cfg, &bank, &ck)?;
    let report = evaluate(&bank, &ck, &cfg.inference, confusion)?;
    write_json(&paths.eval, &report)?;
    Ok(report)
}

pub fn sweep(cfg: &ExperimentConfig, paths: &Paths, checkpoint: &Path) -> CliResult<Vec<SweepRow>> {
    let bank = read_bank(paths)?;
    let ck = read_checkpoint(checkpoint)?;
    check_split(cfg, &bank, &ck)?;
    let schedule = ck.config.schedule.build()?;
    let model = DenoiserModel {
        params: &ck.params,
        config: &ck.config.denoiser,
    };
    let rows = sweep_t_test(
        &model,
        &bank,
        &ck.split,
        &schedule,
        &cfg.sweep.t_values,
        cfg.sweep.trials,
        cfg.inference.noise_seed,
    )?;
    write_file(&paths.sweep, sweep_csv(&rows))?;
    Ok(rows)
}

/// Trained models keyed by their full training setup.
#[derive(Default)]
pub struct TrainCache {
    runs: HashMap<String, (Checkpoint, f64)>,
    used: HashSet<String>,
    pub trained: usize,
    pub reused: usize,
    /// Total time spent training fresh runs.
    pub train_seconds: f64,
}

impl TrainCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_train(&mut self, bank: &FeatureBank, split: &SplitSpec, config: &TrainConfig) -> CliResult<Checkpoint> {
        let key = serde_json::to_string(&(config, split, bank.generator_seed, bank.samples.len()))
            .map_err(tdsm::Error::from)?;
        self.used.insert(key.clone());
        if let Some((ck, _)) = self.runs.get(&key) {
            self.reused += 1;
            return Ok(ck.clone());
        }
        let start = Instant::now();
        let ck = tdsm::trainer::train(bank, split, config)?;
        let secs = start.elapsed().as_secs_f64();
        self.trained += 1;
        self.train_seconds += secs;
        self.runs.insert(key, (ck.clone(), secs));
        Ok(ck)
    }

    /// Forgets which runs were looked up so far.
    pub fn reset_usage(&mut self) {
        self.used.clear();
    }

    /// Training time of the distinct runs looked up since the last reset,
    /// whether they were trained then or earlier.
    pub fn usage_seconds(&self) -> f64 {
        self.used.iter().filter_map(|k| self.runs.get(k)).map(|(_, s)| s).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub top1_accuracy: f64,
    pub trial_min: f64,
    pub trial_max: f64,
    pub trial_std: f64,
    pub t_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTableReport {
    pub table: AblationTable,
    pub title: String,
    pub rows: Vec<AblationRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split: SplitSpec,
    pub iterations: usize,
    pub num_noise_trials: usize,
    pub tables: Vec<AblationTableReport>,
}

impl AblationReport {
    pub fn table(&self, t: AblationTable) -> Option<&AblationTableReport> {
        self.tables.iter().find(|r| r.table == t)
    }
}

struct Cell {
    label: String,
    train: TrainConfig,
    inference: InferenceConfig,
}

fn cells(cfg: &ExperimentConfig, table: AblationTable, base: &TrainConfig) -> CliResult<(String, Vec<Cell>)> {
    let cell = |label: String, train: TrainConfig, t_test: usize| Cell {
        label,
        train,
        inference: InferenceConfig {
            t_test,
            ..cfg.inference.clone()
        },
    };
    let t_base = cfg.inference.t_test;
    Ok(match table {
        AblationTable::Loss => (
            "Loss configuration".into(),
            LossMode::ALL
                .iter()
                .map(|&m| {
                    let mut t = base.clone();
                    t.loss = t.loss.with_mode(m);
                    cell(m.label().into(), t, t_base)
                })
                .collect(),
        ),
        AblationTable::Text => (
            "Text feature type".into(),
            [
                (TextConditioning::GlobalOnly, "global-only"),
                (TextConditioning::LocalOnly, "local-only"),
                (TextConditioning::Both, "both"),
            ]
            .into_iter()
            .map(|(mode, label)| {
                let mut t = base.clone();
                t.denoiser.text_conditioning = mode;
                cell(label.into(), t, t_base)
            })
            .collect(),
        ),
        AblationTable::Timesteps => {
            if cfg.ablation.total_steps.is_empty() {
                return Err(CliError::Config("ablation.total_steps is empty".into()));
            }
            (
                "Total timesteps T (t_test = ceil(T/2))".into(),
                cfg.ablation
                    .total_steps
                    .iter()
                    .map(|&steps| {
                        let mut t = base.clone();
                        t.schedule.total_steps = steps;
                        cell(format!("T={steps}"), t, steps.div_ceil(2))
                    })
                    .collect(),
            )
        }
        AblationTable::Noise => (
            "Training noise".into(),
            [(true, "fixed"), (false, "random")]
                .into_iter()
                .map(|(fixed, label)| {
                    let mut t = base.clone();
                    t.fixed_noise = fixed;
                    cell(label.into(), t, t_base)
                })
                .collect(),
        ),
    })
}

/// Trains and evaluates every cell of the requested tables on one bank.
pub fn ablate_bank(
    cfg: &ExperimentConfig,
    bank: &FeatureBank,
    cache: &mut TrainCache,
    mut progress: impl FnMut(AblationTable, &AblationRow),
) -> CliResult<AblationReport> {
    let split = split_for(cfg, bank)?;
    let base = cfg.train_config(bank.dims);
    let mut tables = Vec::new();
    for &table in &cfg.ablation.tables {
        let (title, cells) = cells(cfg, table, &base)?;
        let mut rows = Vec::with_capacity(cells.len());
        for c in cells {
            let ck = cache.get_or_train(bank, &split, &c.train)?;
            let r = evaluate(bank, &ck, &c.inference, false)?;
            let row = AblationRow {
                label: c.label,
                top1_accuracy: r.top1_accuracy,
                trial_min: r.trial_min,
                trial_max: r.trial_max,
                trial_std: r.trial_std,
                t_test: c.inference.t_test,
            };
            progress(table, &row);
            rows.push(row);
        }
        tables.push(AblationTableReport { table, title, rows });
    }
    Ok(AblationReport {
        split,
        iterations: base.iterations,
        num_noise_trials: cfg.inference.num_noise_trials,
        tables,
    })
}

pub fn ablate(
    cfg: &ExperimentConfig,
    paths: &Paths,
    cache: &mut TrainCache,
    progress: impl FnMut(AblationTable, &AblationRow),
) -> CliResult<AblationReport> {
    let bank = read_bank(paths)?;
    let report = ablate_bank(cfg, &bank, cache, progress)?;
    write_json(&paths.ablation, &report)?;
    Ok(report)
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Renders whatever artifacts exist under the output root as markdown.
pub fn report(paths: &Paths) -> CliResult<String> {
    let mut out = String::from("# Experiment report\n");
    let mut found = false;
    if paths.eval.exists() {
        found = true;
        let r: EvalReport = read_json(&paths.eval)?;
        out.push_str(&format!(
            "\n## Evaluation\n\nTop-1 on unseen classes {:?}: **{}%** (mean of {} trials at t_test={}; min {}, max {}, std {}).\n\n| class | name | samples | top-1 % |\n|---|---|---|---|\n",
            r.split.unseen,
            pct(r.top1_accuracy),
            r.trial_accuracies.len(),
            r.inference.t_test,
            pct(r.trial_min),
            pct(r.trial_max),
            pct(r.trial_std),
        ));
        for c in &r.per_class {
            out.push_str(&format!("| {} | {} | {} | {} |\n", c.class_id, c.name, c.samples, pct(c.accuracy)));
        }
        if let Some(cm) = &r.confusion {
            out.push_str("\nConfusion (rows true, columns predicted, mean over trials):\n\n|  |");
            for c in &cm.classes {
                out.push_str(&format!(" {c} |"));
            }
            out.push_str(&format!("\n|---|{}\n", "---|".repeat(cm.classes.len())));
            for (c, row) in cm.classes.iter().zip(&cm.counts) {
                out.push_str(&format!("| **{c}** |"));
                for v in row {
                    out.push_str(&format!(" {v:.1} |"));
                }
                out.push('\n');
            }
        }
    }
    if paths.sweep.exists() {
        found = true;
        let text = std::fs::read_to_string(&paths.sweep).map_err(io_at(&paths.sweep))?;
        out.push_str("\n## Inference timestep sweep\n\n| t | mean % | min % | max % |\n|---|---|---|---|\n");
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| f.get(i).and_then(|s| s.parse::<f64>().ok()).map(pct).unwrap_or_default();
            out.push_str(&format!("| {} | {} | {} | {} |\n", f[0], num(1), num(2), num(3)));
        }
    }
    if paths.ablation.exists() {
        found = true;
        let a: AblationReport = read_json(&paths.ablation)?;
        out.push_str(&format!(
            "\n## Ablations\n\n{} training steps per cell, {} noise trials.\n",
            a.iterations, a.num_noise_trials
        ));
        for t in &a.tables {
            out.push_str(&format!("\n### {}\n\n| setting | top-1 % | min % | max % | std % |\n|---|---|---|---|---|\n", t.title));
            for r in &t.rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    r.label,
                    pct(r.top1_accuracy),
                    pct(r.trial_min),
                    pct(r.trial_max),
                    pct(r.trial_std)
                ));
            }
        }
    }
    if !found {
        return Err(CliError::Config(format!(
            "no eval.json, sweep.csv or ablation.json under {}",
            paths.root.display()
        )));
    }
    write_file(&paths.report, &out)?;
    Ok(out)
}
