use super::*;
use crate::denoiser::TextConditioning;
use crate::features::{generate_synthetic_bank, make_split, FeatureDims, GeneratorConfig};
use crate::loss::LossMode;

fn bank(noise_std: f64) -> FeatureBank {
    generate_synthetic_bank(&GeneratorConfig {
        num_classes: 6,
        samples_per_class: 8,
        noise_std,
        seed: 31,
        ..GeneratorConfig::desk()
    })
    .unwrap()
}

fn small_config(iterations: usize) -> TrainConfig {
    let mut den = DenoiserConfig::desk(FeatureDims::DESK);
    den.num_blocks = 1;
    den.model_dim = 16;
    den.num_heads = 2;
    den.mlp_ratio = 2.0;
    TrainConfig {
        iterations,
        warmup_steps: 10.min(iterations / 2),
        batch_size: 8,
        peak_lr: 3e-3,
        ..TrainConfig::desk(den)
    }
}

fn setup(iterations: usize) -> (FeatureBank, SplitSpec, TrainConfig) {
    let b = bank(0.1);
    let s = make_split(&b, 2, 5).unwrap();
    (b, s, small_config(iterations))
}

#[test]
fn lr_schedule_examples() {
    let cfg = TrainConfig {
        iterations: 2000,
        warmup_steps: 100,
        peak_lr: 1e-3,
        ..small_config(2000)
    };
    assert_eq!(lr_at(0, &cfg), 0.0);
    assert_eq!(lr_at(1, &cfg), 1e-3 / 100.0);
    assert_eq!(lr_at(100, &cfg), 1e-3);
    let (n, w) = (2000.0, 100.0);
    let oracle = 1e-3 * (1.0 - (std::f64::consts::PI / (n - w)).cos()) / 2.0;
    let last = lr_at(1999, &cfg);
    assert!((last - oracle).abs() < 1e-18);
    assert!(last <= 1e-6 * 1e-3);
    assert!(lr_at(2000, &cfg).abs() < 1e-18);
    // Continuity at the warmup boundary and monotone decay after it.
    assert!((lr_at(101, &cfg) - lr_at(100, &cfg)).abs() < 1e-3 * 1e-5);
    for s in 100..2000 {
        assert!(lr_at(s + 1, &cfg) <= lr_at(s, &cfg));
    }
}

#[test]
fn config_validation() {
    let mut c = small_config(10);
    c.warmup_steps = 10;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = small_config(10);
    c.batch_size = 0;
    assert!(c.validate().is_err());
    let mut c = small_config(10);
    c.loss.use_diff = false;
    c.loss.use_td = false;
    assert!(c.validate().is_err());
}

#[test]
fn one_step_moves_parameters() {
    let (b, s, cfg) = setup(5);
    let mut t = Trainer::new(&b, &s, &cfg).unwrap();
    let init = t.params().clone();
    let m = t.train_step().unwrap();
    assert_eq!(m.step, 1);
    assert!(m.loss.is_finite() && m.l_td.is_some());
    assert_ne!(t.params(), &init);
    // The zero head receives a nonzero gradient on the first step.
    assert!(t.params().head.weight.data().iter().any(|&v| v != 0.0));
}

#[test]
fn trains_only_on_seen_classes() {
    let (b, s, cfg) = setup(5);
    let t = Trainer::new(&b, &s, &cfg).unwrap();
    assert_eq!(t.seen_classes(), s.seen);
    assert!(t.bank.samples.iter().all(|x| s.seen.contains(&x.class_id)));
    assert!(t.bank.classes.iter().all(|c| s.seen.contains(&c.class_id)));
}

#[test]
fn loss_trends_down_on_noiseless_bank() {
    let b = bank(0.0);
    let s = make_split(&b, 2, 5).unwrap();
    let cfg = small_config(200);
    let mut t = Trainer::new(&b, &s, &cfg).unwrap();
    let mut losses = Vec::new();
    t.run(|_, m| {
        losses.push(m.loss);
        Ok(())
    })
    .unwrap();
    assert!(losses.iter().all(|l| l.is_finite()));
    let ma: Vec<f64> = losses.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in ma.windows(2) {
        assert!(w[1] < w[0], "{ma:?}");
    }
}

#[test]
fn fixed_noise_mode_fits_training_loss_faster() {
    let (b, s, mut cfg) = setup(150);
    cfg.loss = cfg.loss.with_mode(LossMode::DiffOnly);
    let tail = |cfg: &TrainConfig| {
        let mut t = Trainer::new(&b, &s, cfg).unwrap();
        let mut losses = Vec::new();
        t.run(|_, m| {
            losses.push(m.loss);
            Ok(())
        })
        .unwrap();
        losses[100..].iter().sum::<f64>() / 50.0
    };
    let random = tail(&cfg);
    cfg.fixed_noise = true;
    let fixed = tail(&cfg);
    assert!(fixed < random, "fixed {fixed} vs random {random}");
}

#[test]
fn diffusion_only_skips_negatives_and_other_modes_run() {
    let (b, s, mut cfg) = setup(3);
    cfg.loss = cfg.loss.with_mode(LossMode::DiffOnly);
    let mut t = Trainer::new(&b, &s, &cfg).unwrap();
    assert!(t.train_step().unwrap().l_td.is_none());

    cfg.loss = cfg.loss.with_mode(LossMode::TdOnly);
    cfg.denoiser.prediction_target = PredictionTarget::X0;
    cfg.denoiser.text_conditioning = TextConditioning::GlobalOnly;
    let mut t = Trainer::new(&b, &s, &cfg).unwrap();
    let m = t.train_step().unwrap();
    assert_eq!(m.loss, m.l_td.unwrap());
}

#[test]
fn checkpoint_round_trip_and_resume_is_bit_exact() {
    let (b, s, cfg) = setup(20);
    let mut full = Trainer::new(&b, &s, &cfg).unwrap();
    full.run(|_, _| Ok(())).unwrap();

    let mut first = Trainer::new(&b, &s, &cfg).unwrap();
    for _ in 0..10 {
        first.train_step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.tdsmck");
    let ck = first.checkpoint();
    save_checkpoint(&ck, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ck);

    let mut resumed = Trainer::resume(&b, &loaded).unwrap();
    resumed.run(|_, _| Ok(())).unwrap();
    let (x, y) = (encode_checkpoint(&full.checkpoint()).unwrap(), encode_checkpoint(&resumed.checkpoint()).unwrap());
    assert!(x == y, "resumed run diverged");

    let again = train(&b, &s, &cfg).unwrap();
    assert!(encode_checkpoint(&again).unwrap() == x);
}

#[test]
fn checkpoint_format_errors() {
    let (b, s, cfg) = setup(2);
    let t = Trainer::new(&b, &s, &cfg).unwrap();
    let mut bytes = encode_checkpoint(&t.checkpoint()).unwrap();
    assert_eq!(&bytes[..8], b"TDSMCK01");
    let good = bytes.clone();
    bytes[8] = 9;
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format { offset: 8, .. })));
    assert!(matches!(decode_checkpoint(&good[..good.len() - 3]), Err(Error::Format { .. })));
    let mut long = good.clone();
    long.push(0);
    assert!(decode_checkpoint(&long).is_err());
}
