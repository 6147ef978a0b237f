//! One-step zero-shot classification.
//!
//! A test feature is noised once at `t_test` with a fixed `ε_test`; every
//! candidate label's text conditions one denoising pass, and the label whose
//! prediction lands closest to the target (`ε_test`, or the clean feature in
//! x0 mode) wins.

use serde::{Deserialize, Serialize};

use crate::denoiser::{self, DenoiserConfig, DenoiserParams, PredictionTarget};
use crate::error::{Error, Result};
use crate::features::{ClassRecord, FeatureBank, FeatureDims, SplitSpec};
use crate::rng::{stream_rng, Stream};
use crate::schedule::{q_sample_with, NoiseSchedule};
use crate::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub t_test: usize,
    pub noise_seed: u64,
    pub num_noise_trials: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            t_test: 25,
            noise_seed: 2025,
            num_noise_trials: 10,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.t_test > schedule.total_steps() {
            return Err(Error::config(format!(
                "t_test {} outside 0..={}",
                self.t_test,
                schedule.total_steps()
            )));
        }
        if self.num_noise_trials == 0 {
            return Err(Error::config("num_noise_trials must be at least 1"));
        }
        Ok(())
    }
}

/// The fixed test noise of trial `trial`.
pub fn test_noise(noise_seed: u64, trial: usize, dims: FeatureDims) -> Tensor {
    let mut rng = stream_rng(noise_seed.wrapping_add(trial as u64), Stream::EvalNoise);
    Tensor::randn(dims.skeleton_tokens, dims.skeleton_dim, &mut rng)
}

/// A packed batch of (sample, candidate) pairs to denoise.
pub struct Query<'a> {
    /// Sample each item came from.
    pub sample_ids: &'a [u32],
    /// Candidate label each item is conditioned on.
    pub candidates: &'a [u32],
    pub timesteps: &'a [usize],
    /// `items * M_x` rows.
    pub z_xt: &'a Tensor,
    /// `items` rows.
    pub global: &'a Tensor,
    /// `items * M_l` rows.
    pub local: &'a Tensor,
}

/// Anything that predicts `ε̂` (or `ẑ_x`) for a packed batch.
pub trait NoisePredictor {
    fn dims(&self) -> FeatureDims;
    fn target(&self) -> PredictionTarget;
    fn predict(&self, q: &Query<'_>) -> Result<Tensor>;
}

/// A trained denoiser.
pub struct DenoiserModel<'a> {
    pub params: &'a DenoiserParams,
    pub config: &'a DenoiserConfig,
}

impl NoisePredictor for DenoiserModel<'_> {
    fn dims(&self) -> FeatureDims {
        self.config.dims
    }

    fn target(&self) -> PredictionTarget {
        self.config.prediction_target
    }

    fn predict(&self, q: &Query<'_>) -> Result<Tensor> {
        denoiser::predict(self.params, self.config, q.z_xt, q.timesteps, q.global, q.local)
    }
}

/// Scores `‖target − prediction‖` for every (sample, candidate) pair.
/// Returns one row per sample, candidates in the given order.
fn score_batch(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    samples: &[(u32, &Tensor)],
    candidates: &[&ClassRecord],
    t: usize,
    eps: &Tensor,
) -> Result<Vec<Vec<f64>>> {
    if candidates.is_empty() {
        return Err(Error::contract("no candidate labels"));
    }
    let d = predictor.dims();
    let ab = schedule.alpha_bar(t)?;
    let k = candidates.len();
    let n = samples.len() * k;
    let mut sample_ids = Vec::with_capacity(n);
    let mut cand_ids = Vec::with_capacity(n);
    let mut z_rows = Vec::with_capacity(n * d.skeleton_tokens * d.skeleton_dim);
    let mut g_rows = Vec::with_capacity(n * d.text_dim);
    let mut l_rows = Vec::with_capacity(n * d.text_tokens * d.text_dim);
    for &(id, z) in samples {
        let z_t = q_sample_with(z, ab, eps)?;
        for c in candidates {
            sample_ids.push(id);
            cand_ids.push(c.class_id);
            z_rows.extend_from_slice(z_t.data());
            g_rows.extend_from_slice(c.global.data());
            l_rows.extend_from_slice(c.local.data());
        }
    }
    let z_xt = Tensor::matrix(n * d.skeleton_tokens, d.skeleton_dim, z_rows)?;
    let global = Tensor::matrix(n, d.text_dim, g_rows)?;
    let local = Tensor::matrix(n * d.text_tokens, d.text_dim, l_rows)?;
    let timesteps = vec![t; n];
    let pred = predictor.predict(&Query {
        sample_ids: &sample_ids,
        candidates: &cand_ids,
        timesteps: &timesteps,
        z_xt: &z_xt,
        global: &global,
        local: &local,
    })?;
    let per = d.skeleton_tokens * d.skeleton_dim;
    if pred.len() != n * per {
        return Err(Error::contract(format!("predictor returned {} values for {n} items", pred.len())));
    }
    let target_of = |i: usize| -> &[f64] {
        match predictor.target() {
            PredictionTarget::Noise => eps.data(),
            PredictionTarget::X0 => samples[i / k].1.data(),
        }
    };
    let scores: Vec<f64> = pred
        .data()
        .chunks_exact(per)
        .enumerate()
        .map(|(i, p)| p.iter().zip(target_of(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    Ok(scores.chunks_exact(k).map(<[f64]>::to_vec).collect())
}

/// `(class_id, score)` for every candidate, in candidate order.
pub fn score_labels(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z_x: &Tensor,
    sample_id: u32,
    candidates: &[&ClassRecord],
    t_test: usize,
    eps_test: &Tensor,
) -> Result<Vec<(u32, f64)>> {
    let rows = score_batch(predictor, schedule, &[(sample_id, z_x)], candidates, t_test, eps_test)?;
    Ok(candidates.iter().map(|c| c.class_id).zip(rows[0].iter().copied()).collect())
}

/// The minimum-score label; equal scores go to the lowest class id.
pub fn argmin_label(scores: &[(u32, f64)]) -> Result<u32> {
    scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|s| s.0)
        .ok_or_else(|| Error::contract("no candidate labels"))
}

pub fn classify(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z_x: &Tensor,
    sample_id: u32,
    candidates: &[&ClassRecord],
    t_test: usize,
    eps_test: &Tensor,
) -> Result<u32> {
    argmin_label(&score_labels(predictor, schedule, z_x, sample_id, candidates, t_test, eps_test)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: u32,
    pub name: String,
    pub samples: usize,
    /// Mean over trials.
    pub accuracy: f64,
}

/// Predictions per true class, averaged over trials, so every row sums to
/// that class's sample count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Row and column order.
    pub classes: Vec<u32>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean of the per-trial accuracies.
    pub top1_accuracy: f64,
    pub trial_accuracies: Vec<f64>,
    pub trial_min: f64,
    pub trial_max: f64,
    /// Population standard deviation over trials.
    pub trial_std: f64,
    pub num_samples: usize,
    pub per_class: Vec<ClassAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    pub inference: InferenceConfig,
    pub split: SplitSpec,
}

struct TrialOutcome {
    accuracy: f64,
    /// Predicted label per sample, in sample order.
    predicted: Vec<u32>,
}

fn unseen_parts<'a>(bank: &'a FeatureBank, split: &'a SplitSpec) -> Result<(Vec<&'a ClassRecord>, Vec<(u32, u32, &'a Tensor)>)> {
    split.validate(bank)?;
    let candidates: Vec<&ClassRecord> = split
        .unseen
        .iter()
        .map(|&c| bank.class(c).expect("validated split"))
        .collect();
    let samples: Vec<(u32, u32, &Tensor)> = bank
        .samples_in(&split.unseen)
        .map(|s| (s.sample_id, s.class_id, &s.skeleton))
        .collect();
    if samples.is_empty() {
        return Err(Error::config("no samples in the unseen classes"));
    }
    Ok((candidates, samples))
}

fn run_trial(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    candidates: &[&ClassRecord],
    samples: &[(u32, u32, &Tensor)],
    t: usize,
    eps: &Tensor,
) -> Result<TrialOutcome> {
    let pairs: Vec<(u32, &Tensor)> = samples.iter().map(|&(id, _, z)| (id, z)).collect();
    let rows = score_batch(predictor, schedule, &pairs, candidates, t, eps)?;
    let mut correct = 0usize;
    let mut predicted = Vec::with_capacity(samples.len());
    for (row, &(_, truth, _)) in rows.iter().zip(samples) {
        let scored: Vec<(u32, f64)> = candidates.iter().map(|c| c.class_id).zip(row.iter().copied()).collect();
        let p = argmin_label(&scored)?;
        correct += usize::from(p == truth);
        predicted.push(p);
    }
    Ok(TrialOutcome {
        accuracy: correct as f64 / samples.len() as f64,
        predicted,
    })
}

fn spread(v: &[f64]) -> (f64, f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean.clamp(min, max), min, max, std)
}

/// Scores every unseen-class sample against the unseen labels only, once per
/// noise trial.
pub fn evaluate_split(
    predictor: &dyn NoisePredictor,
    bank: &FeatureBank,
    split: &SplitSpec,
    schedule: &NoiseSchedule,
    cfg: &InferenceConfig,
) -> Result<EvalReport> {
    cfg.validate(schedule)?;
    if bank.dims != predictor.dims() {
        return Err(Error::config(format!(
            "bank dims {:?} differ from model dims {:?}",
            bank.dims,
            predictor.dims()
        )));
    }
    let (candidates, samples) = unseen_parts(bank, split)?;
    let classes: Vec<u32> = candidates.iter().map(|c| c.class_id).collect();
    let index = |c: u32| classes.binary_search(&c).expect("unseen class");
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut trial_accuracies = Vec::with_capacity(cfg.num_noise_trials);
    for trial in 0..cfg.num_noise_trials {
        let eps = test_noise(cfg.noise_seed, trial, bank.dims);
        let out = run_trial(predictor, schedule, &candidates, &samples, cfg.t_test, &eps)?;
        for (&(_, truth, _), &p) in samples.iter().zip(&out.predicted) {
            confusion[index(truth)][index(p)] += 1;
        }
        trial_accuracies.push(out.accuracy);
    }
    let trials = cfg.num_noise_trials as f64;
    let per_class = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let total: usize = confusion[i].iter().sum();
            ClassAccuracy {
                class_id: c.class_id,
                name: c.name.clone(),
                samples: (total as f64 / trials).round() as usize,
                accuracy: if total == 0 { 0.0 } else { confusion[i][i] as f64 / total as f64 },
            }
        })
        .collect();
    let (mean, min, max, std) = spread(&trial_accuracies);
    Ok(EvalReport {
        top1_accuracy: mean,
        trial_min: min,
        trial_max: max,
        trial_std: std,
        trial_accuracies,
        num_samples: samples.len(),
        per_class,
        confusion: Some(ConfusionMatrix {
            classes,
            counts: confusion
                .iter()
                .map(|r| r.iter().map(|&c| c as f64 / trials).collect())
                .collect(),
        }),
        inference: cfg.clone(),
        split: split.clone(),
    })
}

/// Accuracy statistics at one `t_test`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub trials: usize,
}

/// Accuracy over noise trials for each `t` in `t_values`.
pub fn sweep_t_test(
    predictor: &dyn NoisePredictor,
    bank: &FeatureBank,
    split: &SplitSpec,
    schedule: &NoiseSchedule,
    t_values: &[usize],
    trials: usize,
    noise_seed: u64,
) -> Result<Vec<SweepRow>> {
    let (candidates, samples) = unseen_parts(bank, split)?;
    t_values
        .iter()
        .map(|&t| {
            InferenceConfig {
                t_test: t,
                noise_seed,
                num_noise_trials: trials,
            }
            .validate(schedule)?;
            let accs = (0..trials)
                .map(|i| {
                    let eps = test_noise(noise_seed, i, bank.dims);
                    Ok(run_trial(predictor, schedule, &candidates, &samples, t, &eps)?.accuracy)
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean, min, max, _) = spread(&accs);
            Ok(SweepRow { t, mean, min, max, trials })
        })
        .collect()
}

/// CSV with header `t,mean,min,max,trials`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("t,mean,min,max,trials\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.t, r.mean, r.min, r.max, r.trials));
    }
    out
}

#[cfg(test)]
mod tests;
