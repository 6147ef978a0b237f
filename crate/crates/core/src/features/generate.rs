use serde::{Deserialize, Serialize};

use super::{ClassRecord, FeatureBank, FeatureDims, SampleRecord};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::Tensor;

/// Width of the per-class latent shared by skeleton and text prototypes.
pub const LATENT_DIM: usize = 64;

/// Separation checks only apply up to this sample noise level.
const SEPARATION_CHECK_MAX_NOISE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dims: FeatureDims,
    /// Standard deviation of per-sample skeleton noise around the prototype.
    pub noise_std: f64,
    pub seed: u64,
    /// Permit dims other than [`FeatureDims::REFERENCE`].
    #[serde(default)]
    pub allow_custom_dims: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_classes: 15,
            samples_per_class: 40,
            dims: FeatureDims::REFERENCE,
            noise_std: 0.1,
            seed: 2025,
            allow_custom_dims: false,
        }
    }
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        Self {
            dims: FeatureDims::DESK,
            allow_custom_dims: true,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.num_classes > u32::MAX as usize {
            return Err(Error::config("too many classes"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::config("noise_std must be finite and non-negative"));
        }
        self.dims.validate()?;
        if self.dims.text_tokens == 0 {
            return Err(Error::config("text_tokens must be positive"));
        }
        if !self.allow_custom_dims && self.dims != FeatureDims::REFERENCE {
            return Err(Error::config(format!(
                "dims {:?} differ from the reference {:?}; set allow_custom_dims to override",
                self.dims,
                FeatureDims::REFERENCE
            )));
        }
        Ok(())
    }
}

fn unit_rms(v: &mut [f64]) {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if rms > 0.0 {
        v.iter_mut().for_each(|x| *x /= rms);
    }
}

fn project(proj: &Tensor, latent: &[f64]) -> Vec<f64> {
    (0..proj.rows())
        .map(|r| proj.row(r).iter().zip(latent).map(|(a, b)| a * b).sum())
        .collect()
}

/// Generates a bank; see [`generate_with_prototypes`].
pub fn generate_synthetic_bank(config: &GeneratorConfig) -> Result<FeatureBank> {
    generate_with_prototypes(config).map(|(bank, _)| bank)
}

/// Generates a bank together with the clean skeleton prototype of every
/// class (in class order).
///
/// Each class draws a latent `u_k`; fixed random projections map it to the
/// skeleton prototype and to the global and local text prototypes, so the two
/// modalities share structure across classes. Every prototype is scaled to
/// unit RMS. Stored values are rounded to binary32 so that a saved bank loads
/// back bit-identically.
pub fn generate_with_prototypes(config: &GeneratorConfig) -> Result<(FeatureBank, Vec<Tensor>)> {
    config.validate()?;
    let d = config.dims;
    let mut rng = stream_rng(config.seed, Stream::Generator);

    let skel_len = d.skeleton_tokens * d.skeleton_dim;
    let text_len = (1 + d.text_tokens) * d.text_dim;
    let skel_proj = Tensor::randn(skel_len, LATENT_DIM, &mut rng);
    let text_proj = Tensor::randn(text_len, LATENT_DIM, &mut rng);

    let mut classes = Vec::with_capacity(config.num_classes);
    let mut prototypes = Vec::with_capacity(config.num_classes);
    for k in 0..config.num_classes {
        let latent = Tensor::randn(1, LATENT_DIM, &mut rng);
        let mut proto = project(&skel_proj, latent.data());
        unit_rms(&mut proto);
        let text = project(&text_proj, latent.data());
        let mut global = text[..d.text_dim].to_vec();
        let mut local = text[d.text_dim..].to_vec();
        unit_rms(&mut global);
        unit_rms(&mut local);
        let jitter = Tensor::randn(d.text_tokens, d.text_dim, &mut rng);
        for (l, j) in local.iter_mut().zip(jitter.data()) {
            *l += 0.1 * config.noise_std * j;
        }
        prototypes.push(Tensor::matrix(d.skeleton_tokens, d.skeleton_dim, proto)?.round_to_f32());
        classes.push(ClassRecord {
            class_id: k as u32,
            name: format!("action_{k:03}"),
            global: Tensor::matrix(1, d.text_dim, global)?.round_to_f32(),
            local: Tensor::matrix(d.text_tokens, d.text_dim, local)?.round_to_f32(),
        });
    }

    let mut samples = Vec::with_capacity(config.num_classes * config.samples_per_class);
    for (k, proto) in prototypes.iter().enumerate() {
        for _ in 0..config.samples_per_class {
            let noise = Tensor::randn(d.skeleton_tokens, d.skeleton_dim, &mut rng);
            let z = proto.zip_map(&noise, |p, n| p + config.noise_std * n)?;
            samples.push(SampleRecord {
                sample_id: samples.len() as u32,
                class_id: k as u32,
                skeleton: z.round_to_f32(),
            });
        }
    }

    let bank = FeatureBank {
        classes,
        samples,
        dims: d,
        generator_seed: (config.seed != 0).then_some(config.seed),
    };
    bank.validate()?;

    if config.noise_std <= SEPARATION_CHECK_MAX_NOISE && config.samples_per_class >= 2 {
        let stats = separation_stats(&bank);
        if !stats.separated(4.0) {
            return Err(Error::contract(format!(
                "generated bank is not class-separated: {stats:?}"
            )));
        }
    }
    Ok((bank, prototypes))
}

/// Mean pairwise skeleton distances within and across classes, with standard
/// errors of the means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparationStats {
    pub intra_mean: f64,
    pub intra_se: f64,
    pub inter_mean: f64,
    pub inter_se: f64,
}

impl SeparationStats {
    /// `intra + margin * (se_intra + se_inter) < inter`.
    pub fn separated(&self, margin: f64) -> bool {
        self.intra_mean + margin * (self.intra_se + self.inter_se) < self.inter_mean
    }
}

pub fn separation_stats(bank: &FeatureBank) -> SeparationStats {
    let mut intra = Welford::default();
    let mut inter = Welford::default();
    let s = &bank.samples;
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let d = s[i].skeleton.sub(&s[j].skeleton).expect("same dims").norm();
            if s[i].class_id == s[j].class_id {
                intra.push(d);
            } else {
                inter.push(d);
            }
        }
    }
    SeparationStats {
        intra_mean: intra.mean,
        intra_se: intra.se(),
        inter_mean: inter.mean,
        inter_se: inter.se(),
    }
}

#[derive(Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn se(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Fraction of samples in `classes` whose nearest prototype (by Euclidean
/// distance, restricted to `classes`) is their own class. `prototypes` is
/// indexed by class id.
pub fn nearest_prototype_accuracy(
    bank: &FeatureBank,
    prototypes: &[Tensor],
    classes: &std::collections::BTreeSet<u32>,
) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in bank.samples_in(classes) {
        let best = classes
            .iter()
            .map(|&c| (c, s.skeleton.sub(&prototypes[c as usize]).expect("same dims").norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(c, _)| c);
        correct += usize::from(best == Some(s.class_id));
        total += 1;
    }
    correct as f64 / total.max(1) as f64
}
