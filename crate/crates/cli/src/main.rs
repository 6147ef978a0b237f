use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdsm::denoiser::{PredictionTarget, TextConditioning};
use tdsm::features::GeneratorConfig;
use tdsm::loss::LossMode;
use tdsm_cli::config::{AblationTable, ExperimentConfig};
use tdsm_cli::pipeline::{self, TrainCache};
use tdsm_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "tdsm", version, about = "Zero-shot skeleton action recognition with a text-conditioned denoiser")]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config and TDSM_OUTPUT_ROOT.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature bank.
    GenData {
        /// Use the small single-core feature dims.
        #[arg(long)]
        desk: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Bank file path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a denoiser on the seen classes.
    Train {
        #[command(flatten)]
        train: TrainFlags,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Zero-shot evaluation on the unseen classes.
    Eval {
        #[command(flatten)]
        eval: EvalFlags,
        /// Include the confusion matrix.
        #[arg(long)]
        confusion: bool,
    },
    /// Accuracy across inference timesteps.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run the ablation tables.
    Ablate {
        #[arg(long, value_delimiter = ',', value_parser = parse_table)]
        tables: Option<Vec<AblationTable>>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Summarize existing artifacts as markdown.
    Report,
    /// Print the effective config.
    ShowConfig,
}

#[derive(Args)]
struct TrainFlags {
    /// diff-only, td-only or both.
    #[arg(long)]
    loss: Option<LossMode>,
    #[arg(long)]
    fixed_noise: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// noise or x0.
    #[arg(long, value_parser = parse_target)]
    prediction_target: Option<PredictionTarget>,
    /// both, global-only or local-only.
    #[arg(long, value_parser = parse_text)]
    text: Option<TextConditioning>,
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    t_test: Option<usize>,
}

fn parse_kebab<T: for<'de> serde::Deserialize<'de>>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn parse_target(s: &str) -> Result<PredictionTarget, String> {
    parse_kebab(s)
}

fn parse_text(s: &str) -> Result<TextConditioning, String> {
    parse_kebab(s)
}

fn parse_table(s: &str) -> Result<AblationTable, String> {
    parse_kebab(s)
}

impl TrainFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(m) = self.loss {
            cfg.loss = cfg.loss.with_mode(m);
        }
        if self.fixed_noise {
            cfg.train.fixed_noise = true;
        }
        if let Some(n) = self.iterations {
            cfg.train.iterations = n;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(t) = self.prediction_target {
            cfg.denoiser.prediction_target = t;
        }
        if let Some(t) = self.text {
            cfg.denoiser.text_conditioning = t;
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.output {
        cfg.output.dir = o.clone();
    }
    let paths = |cfg: &ExperimentConfig| match &cli.output {
        Some(o) => tdsm_cli::config::Paths::new(o.clone(), &cfg.data.bank),
        None => cfg.paths(),
    };
    match cli.command {
        Command::GenData { desk, seed, out } => {
            if desk {
                cfg.data.generator = GeneratorConfig::desk();
            }
            if let Some(s) = seed {
                cfg.data.generator.seed = s;
            }
            if let Some(o) = out {
                cfg.data.bank = o;
            }
            let p = paths(&cfg);
            let bank = pipeline::gen_data(&cfg, &p)?;
            let d = bank.dims;
            println!(
                "wrote {}: {} classes, {} samples, skeleton {}x{}, text {}x{} (+ global 1x{})",
                p.bank.display(),
                bank.classes.len(),
                bank.samples.len(),
                d.skeleton_tokens,
                d.skeleton_dim,
                d.text_tokens,
                d.text_dim,
                d.text_dim
            );
        }
        Command::Train { train, resume } => {
            train.apply(&mut cfg);
            let p = paths(&cfg);
            let (ck, summary) = pipeline::train(&cfg, &p, resume.as_deref())?;
            match summary.last {
                Some(m) => println!(
                    "trained to step {} (loss {:.5}, l_diff {:.5}); checkpoint {}",
                    ck.step,
                    m.loss,
                    m.l_diff,
                    p.checkpoint.display()
                ),
                None => println!("nothing to do: checkpoint already at step {}", ck.step),
            }
        }
        Command::Eval { eval, confusion } => {
            if let Some(n) = eval.trials {
                cfg.inference.num_noise_trials = n;
            }
            if let Some(t) = eval.t_test {
                cfg.inference.t_test = t;
            }
            let p = paths(&cfg);
            let ck = eval.checkpoint.unwrap_or_else(|| p.checkpoint.clone());
            let r = pipeline::eval(&cfg, &p, &ck, confusion)?;
            println!(
                "top-1 {:.4} over {} trials (min {:.4}, max {:.4}); wrote {}",
                r.top1_accuracy,
                r.trial_accuracies.len(),
                r.trial_min,
                r.trial_max,
                p.eval.display()
            );
        }
        Command::Sweep { checkpoint, trials } => {
            if let Some(n) = trials {
                cfg.sweep.trials = n;
            }
            let p = paths(&cfg);
            let ck = checkpoint.unwrap_or_else(|| p.checkpoint.clone());
            let rows = pipeline::sweep(&cfg, &p, &ck)?;
            for r in &rows {
                println!("t={:<4} mean {:.4} [{:.4}, {:.4}]", r.t, r.mean, r.min, r.max);
            }
            println!("wrote {}", p.sweep.display());
        }
        Command::Ablate { tables, iterations } => {
            if let Some(t) = tables {
                cfg.ablation.tables = t;
            }
            if let Some(n) = iterations {
                cfg.train.iterations = n;
            }
            let p = paths(&cfg);
            let mut cache = TrainCache::new();
            pipeline::ablate(&cfg, &p, &mut cache, |table, row| {
                println!("{table:?} {:<12} top-1 {:.4}", row.label, row.top1_accuracy);
            })?;
            println!("wrote {} ({} trainings, {} reused)", p.ablation.display(), cache.trained, cache.reused);
        }
        Command::Report => {
            let p = paths(&cfg);
            pipeline::report(&p)?;
            println!("wrote {}", p.report.display());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            report_code(&e)
        }
    }
}

fn report_code(e: &CliError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
