use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data.generator]
dims = { skeleton_tokens = 1, skeleton_dim = 32, text_tokens = 8, text_dim = 64 }
allow_custom_dims = true
samples_per_class = 8

[train]
iterations = 12
warmup_steps = 2
batch_size = 8
checkpoint_every = 5

[inference]
num_noise_trials = 2

[sweep]
t_values = [0, 25, 50]
trials = 2
"#;

fn tdsm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdsm"))
        .current_dir(dir)
        .env_remove("TDSM_OUTPUT_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tdsm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    tdsm(dir, args).status.code().expect("exit code")
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

#[test]
fn gen_data_default_uses_reference_dims() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["-o", "o", "gen-data"]);
    assert!(out.contains("15 classes"), "{out}");
    assert!(out.contains("skeleton 1x256, text 35x1024"), "{out}");
    let manifest = std::fs::read_to_string(dir.path().join("o/bank.manifest.json")).unwrap();
    assert!(manifest.contains("\"text_dim\": 1024"));
}

#[test]
fn gen_data_is_reproducible_and_desk_flag_shrinks_dims() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["-o", "a", "gen-data", "--desk", "--seed", "5"]);
    assert!(out.contains("skeleton 1x32, text 8x64"), "{out}");
    ok(d, &["-o", "b", "gen-data", "--desk", "--seed", "5"]);
    ok(d, &["-o", "c", "gen-data", "--desk", "--seed", "6"]);
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/bank.tdsmfb"), read("b/bank.tdsmfb"));
    assert_ne!(read("a/bank.tdsmfb"), read("c/bank.tdsmfb"));
}

#[test]
fn full_pipeline_and_artifacts() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let c = cfg.to_str().unwrap();
    ok(d, &["-c", c, "-o", "run", "gen-data"]);
    ok(d, &["-c", c, "-o", "run", "train"]);
    let ck = std::fs::read(d.join("run/checkpoint.tdsmck")).unwrap();
    assert_eq!(&ck[..8], b"TDSMCK01");
    let metrics = std::fs::read_to_string(d.join("run/metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 12);
    assert_eq!(lines[11]["step"], 12);
    assert!(lines[11]["loss"].as_f64().unwrap().is_finite());

    ok(d, &["-c", c, "-o", "run", "eval", "--trials", "1"]);
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("run/eval.json")).unwrap()).unwrap();
    assert_eq!(eval["trial_accuracies"].as_array().unwrap().len(), 1);
    let acc = eval["top1_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(eval.get("confusion").is_none());

    ok(d, &["-c", c, "-o", "run", "eval", "--confusion"]);
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("run/eval.json")).unwrap()).unwrap();
    let rows = eval["confusion"]["counts"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let total: f64 = r.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 8.0).abs() < 1e-9);
    }

    ok(d, &["-c", c, "-o", "run", "sweep"]);
    let csv = std::fs::read_to_string(d.join("run/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    ok(d, &["-c", c, "-o", "run", "report"]);
    let md = std::fs::read_to_string(d.join("run/report.md")).unwrap();
    assert!(md.contains("## Evaluation") && md.contains("## Inference timestep sweep"));
}

#[test]
fn flags_override_config_keys() {
    let (dir, cfg) = setup();
    let c = cfg.to_str().unwrap();
    let out = ok(dir.path(), &["-c", c, "show-config"]);
    assert!(out.contains("iterations = 12"));
    let parsed: toml::Value = toml::from_str(&out).unwrap();
    assert_eq!(parsed["loss"]["use_td"].as_bool(), Some(true));

    let d = dir.path();
    ok(d, &["-c", c, "-o", "r", "gen-data"]);
    ok(d, &["-c", c, "-o", "r", "train", "--loss", "diff-only", "--iterations", "3", "--prediction-target", "x0", "--text", "global-only"]);
    let metrics = std::fs::read_to_string(d.join("r/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.lines().all(|l| l.contains("\"l_td\":null")));
}

#[test]
fn resume_from_a_periodic_checkpoint_matches_the_full_run() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let c = cfg.to_str().unwrap();
    ok(d, &["-c", c, "-o", "r", "gen-data"]);
    ok(d, &["-c", c, "-o", "r", "train"]);
    assert!(d.join("r/checkpoint.step5.tdsmck").exists());
    assert!(d.join("r/checkpoint.step10.tdsmck").exists());
    let full = std::fs::read(d.join("r/checkpoint.tdsmck")).unwrap();
    let full_metrics = std::fs::read_to_string(d.join("r/metrics.jsonl")).unwrap();

    std::fs::write(
        d.join("r/metrics.jsonl"),
        full_metrics.lines().take(10).map(|l| format!("{l}\n")).collect::<String>(),
    )
    .unwrap();
    std::fs::remove_file(d.join("r/checkpoint.tdsmck")).unwrap();
    ok(d, &["-c", c, "-o", "r", "train", "--resume", "r/checkpoint.step10.tdsmck"]);
    assert_eq!(std::fs::read(d.join("r/checkpoint.tdsmck")).unwrap(), full);
    assert_eq!(std::fs::read_to_string(d.join("r/metrics.jsonl")).unwrap(), full_metrics);

    let out = ok(d, &["-c", c, "-o", "r", "train", "--resume", "r/checkpoint.tdsmck"]);
    assert!(out.contains("already at step 12"), "{out}");
}

#[test]
fn exit_codes_distinguish_failures() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let c = cfg.to_str().unwrap();

    std::fs::write(d.join("bad.toml"), "[train]\niters = 3\n").unwrap();
    assert_eq!(code(d, &["-c", "bad.toml", "show-config"]), 2);
    std::fs::write(d.join("warm.toml"), "[train]\niterations = 3\nwarmup_steps = 5\n").unwrap();
    ok(d, &["-c", c, "-o", "w", "gen-data"]);
    assert_eq!(code(d, &["-c", "warm.toml", "-o", "w", "train"]), 2);

    assert_eq!(code(d, &["-c", c, "-o", "missing", "train"]), 5);

    ok(d, &["-c", c, "-o", "t", "gen-data"]);
    let bank = d.join("t/bank.tdsmfb");
    let bytes = std::fs::read(&bank).unwrap();
    std::fs::write(&bank, &bytes[..bytes.len() / 2]).unwrap();
    let out = tdsm(d, &["-c", c, "-o", "t", "train"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bank.tdsmfb") && err.contains("at byte"), "{err}");

    std::fs::write(d.join("nan.toml"), format!("{TINY}\n").replace("checkpoint_every = 5", "checkpoint_every = 5\npeak_lr = 1e300\nweight_decay = 0.0")).unwrap();
    ok(d, &["-c", "nan.toml", "-o", "n", "gen-data"]);
    let out = tdsm(d, &["-c", "nan.toml", "-o", "n", "train"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn eval_rejects_a_checkpoint_from_another_split() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let c = cfg.to_str().unwrap();
    ok(d, &["-c", c, "-o", "s", "gen-data"]);
    ok(d, &["-c", c, "-o", "s", "train", "--iterations", "3"]);
    std::fs::write(d.join("other.toml"), format!("{TINY}\n[split]\nseed = 99\n")).unwrap();
    assert_eq!(code(d, &["-c", "other.toml", "-o", "s", "eval"]), 2);
}

#[test]
fn output_root_comes_from_the_environment() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_tdsm"))
        .current_dir(d)
        .env("TDSM_OUTPUT_ROOT", d.join("envroot"))
        .args(["-c", cfg.to_str().unwrap(), "gen-data"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("envroot/bank.tdsmfb").exists());
}
