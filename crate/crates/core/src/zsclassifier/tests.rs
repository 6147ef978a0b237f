use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::denoiser::DenoiserParams;
use crate::features::{generate_synthetic_bank, make_split, GeneratorConfig};
use crate::schedule::ScheduleConfig;

fn bank() -> FeatureBank {
    generate_synthetic_bank(&GeneratorConfig {
        num_classes: 8,
        samples_per_class: 20,
        ..GeneratorConfig::desk()
    })
    .unwrap()
}

fn schedule() -> NoiseSchedule {
    ScheduleConfig::default().build().unwrap()
}

/// Recovers the injected noise from the sample it knows and returns it for
/// the true class only, zeros otherwise.
struct Oracle<'a> {
    bank: &'a FeatureBank,
    schedule: NoiseSchedule,
    truth: BTreeMap<u32, u32>,
    seen_items: RefCell<Vec<(u32, u32)>>,
}

impl<'a> Oracle<'a> {
    fn new(bank: &'a FeatureBank) -> Self {
        Self {
            bank,
            schedule: schedule(),
            truth: bank.samples.iter().map(|s| (s.sample_id, s.class_id)).collect(),
            seen_items: RefCell::new(Vec::new()),
        }
    }
}

impl NoisePredictor for Oracle<'_> {
    fn dims(&self) -> FeatureDims {
        self.bank.dims
    }

    fn target(&self) -> PredictionTarget {
        PredictionTarget::Noise
    }

    fn predict(&self, q: &Query<'_>) -> Result<Tensor> {
        let per = self.bank.dims.skeleton_dim * self.bank.dims.skeleton_tokens;
        let mut out = Vec::new();
        for (i, (&sid, &cand)) in q.sample_ids.iter().zip(q.candidates).enumerate() {
            self.seen_items.borrow_mut().push((sid, cand));
            let ab = self.schedule.alpha_bar(q.timesteps[i])?;
            let z = &self.bank.samples[sid as usize].skeleton;
            let zt = &q.z_xt.data()[i * per..(i + 1) * per];
            if self.truth[&sid] == cand {
                out.extend(zt.iter().zip(z.data()).map(|(a, b)| (a - ab.sqrt() * b) / (1.0 - ab).sqrt()));
            } else {
                out.extend(std::iter::repeat_n(0.0, per));
            }
        }
        Tensor::matrix(q.sample_ids.len() * self.bank.dims.skeleton_tokens, self.bank.dims.skeleton_dim, out)
    }
}

fn random_params(cfg: &DenoiserConfig, seed: u64) -> DenoiserParams {
    let mut r = stream_rng(seed, Stream::Init);
    DenoiserParams::init(cfg, seed)
        .unwrap()
        .try_map(|_, t| Ok(Tensor::randn(t.rows(), t.cols(), &mut r).scale(0.3)))
        .unwrap()
}

#[test]
fn oracle_scores_true_class_zero() {
    let b = bank();
    let o = Oracle::new(&b);
    let s = &b.samples[25];
    let eps = test_noise(7, 0, b.dims);
    let cands: Vec<&ClassRecord> = b.classes.iter().collect();
    let scores = score_labels(&o, &o.schedule, &s.skeleton, s.sample_id, &cands, 25, &eps).unwrap();
    for &(c, sc) in &scores {
        if c == s.class_id {
            assert!(sc < 1e-12);
        } else {
            assert_eq!(sc, eps.norm());
        }
    }
    assert_eq!(classify(&o, &o.schedule, &s.skeleton, s.sample_id, &cands, 25, &eps).unwrap(), s.class_id);

    let single = [cands[3]];
    assert_eq!(classify(&o, &o.schedule, &s.skeleton, s.sample_id, &single, 25, &eps).unwrap(), 3);
    assert!(score_labels(&o, &o.schedule, &s.skeleton, s.sample_id, &[], 25, &eps).is_err());
}

#[test]
fn scores_ignore_candidate_order_and_ties_go_to_lowest_id() {
    let b = bank();
    let cfg = DenoiserConfig::desk(b.dims);
    let p = random_params(&cfg, 3);
    let m = DenoiserModel { params: &p, config: &cfg };
    let sch = schedule();
    let s = &b.samples[0];
    let eps = test_noise(1, 0, b.dims);
    let fwd: Vec<&ClassRecord> = b.classes.iter().collect();
    let rev: Vec<&ClassRecord> = b.classes.iter().rev().collect();
    let a: BTreeMap<u32, f64> = score_labels(&m, &sch, &s.skeleton, 0, &fwd, 25, &eps).unwrap().into_iter().collect();
    let r: BTreeMap<u32, f64> = score_labels(&m, &sch, &s.skeleton, 0, &rev, 25, &eps).unwrap().into_iter().collect();
    for (k, v) in &a {
        assert!((v - r[k]).abs() < 1e-12);
    }

    let mut twin = b.classes[2].clone();
    twin.class_id = 9;
    let twins = [&twin, &b.classes[2]];
    let sc = score_labels(&m, &sch, &s.skeleton, 0, &twins, 25, &eps).unwrap();
    assert_eq!(sc[0].1, sc[1].1);
    assert_eq!(classify(&m, &sch, &s.skeleton, 0, &twins, 25, &eps).unwrap(), 2);
    let first = classify(&m, &sch, &s.skeleton, 0, &fwd, 25, &eps).unwrap();
    assert_eq!(classify(&m, &sch, &s.skeleton, 0, &fwd, 25, &eps).unwrap(), first);
}

#[test]
fn argmin_is_invariant_to_monotone_transforms() {
    let scores = [(4, 0.9), (1, 0.3), (7, 1.7), (2, 0.3001)];
    let squared: Vec<(u32, f64)> = scores.iter().map(|&(c, s)| (c, s * s)).collect();
    let logged: Vec<(u32, f64)> = scores.iter().map(|&(c, s)| (c, (s as f64).ln())).collect();
    assert_eq!(argmin_label(&scores).unwrap(), 1);
    assert_eq!(argmin_label(&squared).unwrap(), 1);
    assert_eq!(argmin_label(&logged).unwrap(), 1);
    assert_eq!(argmin_label(&[(5, 1.0), (3, 1.0)]).unwrap(), 3);
}

#[test]
fn oracle_evaluation_is_perfect_and_reads_only_unseen() {
    let b = bank();
    let split = make_split(&b, 5, 4).unwrap();
    let o = Oracle::new(&b);
    let cfg = InferenceConfig { num_noise_trials: 3, ..InferenceConfig::default() };
    let r = evaluate_split(&o, &b, &split, &o.schedule, &cfg).unwrap();
    assert_eq!(r.top1_accuracy, 1.0);
    assert_eq!(r.trial_accuracies, vec![1.0; 3]);
    assert_eq!(r.num_samples, 100);
    let items = o.seen_items.borrow();
    let unseen_samples: BTreeSet<u32> = b.samples_in(&split.unseen).map(|s| s.sample_id).collect();
    assert!(items.iter().all(|(s, c)| unseen_samples.contains(s) && split.unseen.contains(c)));
    let cands: BTreeSet<u32> = items.iter().map(|x| x.1).collect();
    assert_eq!(cands, split.unseen);
}

#[test]
fn random_weights_score_near_chance() {
    let b = generate_synthetic_bank(&GeneratorConfig::desk()).unwrap();
    let split = make_split(&b, 5, 2025).unwrap();
    let cfg = DenoiserConfig::desk(b.dims);
    let p = random_params(&cfg, 17);
    let m = DenoiserModel { params: &p, config: &cfg };
    let inf = InferenceConfig::default();
    let r = evaluate_split(&m, &b, &split, &schedule(), &inf).unwrap();
    // Trials reuse the same samples, so bound with one trial's sample count.
    let n = r.num_samples as f64;
    let sigma = (0.2 * 0.8 / n).sqrt();
    assert!((r.top1_accuracy - 0.2).abs() < 5.0 * sigma, "{}", r.top1_accuracy);

    // Zero-initialized head: every candidate ties, so the lowest id always wins.
    let p0 = DenoiserParams::init(&cfg, 1).unwrap();
    let m0 = DenoiserModel { params: &p0, config: &cfg };
    let r0 = evaluate_split(&m0, &b, &split, &schedule(), &InferenceConfig { num_noise_trials: 1, ..inf }).unwrap();
    assert_eq!(r0.top1_accuracy, 0.2);
}

#[test]
fn reports_are_deterministic_and_consistent() {
    let b = bank();
    let split = make_split(&b, 4, 1).unwrap();
    let cfg = DenoiserConfig::desk(b.dims);
    let p = random_params(&cfg, 5);
    let m = DenoiserModel { params: &p, config: &cfg };
    let inf = InferenceConfig { num_noise_trials: 4, ..InferenceConfig::default() };
    let a = evaluate_split(&m, &b, &split, &schedule(), &inf).unwrap();
    let c = evaluate_split(&m, &b, &split, &schedule(), &inf).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    assert!(a.trial_min <= a.top1_accuracy && a.top1_accuracy <= a.trial_max);
    let conf = a.confusion.as_ref().unwrap();
    assert_eq!(conf.classes, split.unseen.iter().copied().collect::<Vec<_>>());
    for (row, pc) in conf.counts.iter().zip(&a.per_class) {
        assert!((row.iter().sum::<f64>() - pc.samples as f64).abs() < 1e-9);
        assert_eq!(pc.samples, 20);
    }
    let back: EvalReport = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(back, a);

    let bad = InferenceConfig { t_test: 51, ..inf.clone() };
    assert!(matches!(evaluate_split(&m, &b, &split, &schedule(), &bad), Err(Error::Config(_))));
}

#[test]
fn sweep_rows_are_well_formed() {
    let b = bank();
    let split = make_split(&b, 4, 1).unwrap();
    let cfg = DenoiserConfig::desk(b.dims);
    let p = random_params(&cfg, 5);
    let m = DenoiserModel { params: &p, config: &cfg };
    let ts: Vec<usize> = (0..=50).step_by(5).collect();
    let rows = sweep_t_test(&m, &b, &split, &schedule(), &ts, 3, 9).unwrap();
    assert_eq!(rows.len(), 11);
    for r in &rows {
        assert!(r.min <= r.mean && r.mean <= r.max);
    }
    let one = sweep_t_test(&m, &b, &split, &schedule(), &[10, 30], 1, 9).unwrap();
    for r in &one {
        assert!(r.min == r.mean && r.mean == r.max);
    }
    let csv = sweep_csv(&rows);
    assert!(csv.starts_with("t,mean,min,max,trials\n"));
    assert_eq!(csv.lines().count(), 12);
    assert!(sweep_t_test(&m, &b, &split, &schedule(), &[51], 1, 9).is_err());
}

#[test]
fn t_zero_scores_the_clean_feature() {
    // At t = 0 the noised input is the clean feature; record what the
    // predictor receives.
    struct Echo(FeatureDims, RefCell<Option<Tensor>>);
    impl NoisePredictor for Echo {
        fn dims(&self) -> FeatureDims {
            self.0
        }
        fn target(&self) -> PredictionTarget {
            PredictionTarget::Noise
        }
        fn predict(&self, q: &Query<'_>) -> Result<Tensor> {
            *self.1.borrow_mut() = Some(q.z_xt.clone());
            Ok(Tensor::zeros(q.z_xt.rows(), q.z_xt.cols()))
        }
    }
    let b = bank();
    let e = Echo(b.dims, RefCell::new(None));
    let s = &b.samples[3];
    let eps = test_noise(0, 0, b.dims);
    let sc = score_labels(&e, &schedule(), &s.skeleton, 3, &[&b.classes[0]], 0, &eps).unwrap();
    assert!(e.1.borrow().as_ref().unwrap().bit_eq(&s.skeleton));
    assert_eq!(sc[0].1, eps.norm());
}
