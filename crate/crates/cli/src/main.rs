//! `rdsa`: train classifiers, run shuffle-attack sweeps and augmentation
//! experiments, and summarize run directories.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdsa_core::model::ModelError;
use rdsa_core::pipeline::{
    generate_report, run_attack_pipeline, run_augmentation_pipeline, run_training, write_synthetic, PipelineError,
    RunOptions, Stage, SweepResult,
};

use config::{ConfigError, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_TRAINING: u8 = 4;
const EXIT_CONTRACT: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "rdsa",
    version,
    about = "Random distribution shuffle attacks on tabular classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the configured model and save a checkpoint.
    Train(RunArgs),
    /// Run the attack sweep over the configured n_vars grid.
    Attack(RunArgs),
    /// Run the augmentation and retraining experiment.
    Augment(RunArgs),
    /// Rebuild report tables from a finished run directory.
    Report { run_dir: PathBuf },
    /// Generate the configured synthetic dataset as CSV splits.
    Synth(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for attacks and repetitions.
    #[arg(long)]
    workers: Option<usize>,
    /// Attack with this checkpoint instead of training.
    #[arg(long)]
    reuse_model: Option<PathBuf>,
}

enum Failure {
    Config(ConfigError),
    Pipeline(PipelineError),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn exit_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Config(_) => EXIT_CONFIG,
        PipelineError::Model {
            source: ModelError::NonFiniteLoss { .. },
            ..
        } => EXIT_TRAINING,
        PipelineError::Model {
            stage: Stage::Train | Stage::Retrain,
            ..
        } => EXIT_TRAINING,
        PipelineError::Data { .. }
        | PipelineError::Model { .. }
        | PipelineError::Histogram { .. }
        | PipelineError::Io { .. }
        | PipelineError::Json { .. }
        | PipelineError::MissingCheckpoint(_)
        | PipelineError::MissingRunArtifacts(_) => EXIT_DATA,
        PipelineError::Attack { .. }
        | PipelineError::Metrics { .. }
        | PipelineError::InsufficientAdversaries { .. }
        | PipelineError::AugmentedSizeMismatch { .. }
        | PipelineError::TestSetAltered { .. } => EXIT_CONTRACT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Report { run_dir } => {
            let files = generate_report(&run_dir)?;
            println!("{}", files.markdown.display());
            println!("{}", files.aggregate.display());
            Ok(())
        }
        Command::Train(args) => {
            let (cfg, out) = setup(&args)?;
            let result = run_training(&cfg.experiment(), &out);
            snapshot(&cfg, &out);
            let trained = result?;
            if let Some(last) = trained.log.epochs.last() {
                println!(
                    "final train loss {:.6}, accuracy {:.4}",
                    last.train_loss, last.train_accuracy
                );
            }
            println!("test accuracy {:.4}, AUROC {:.4}", trained.accuracy, trained.auroc);
            println!("{}", trained.checkpoint.display());
            Ok(())
        }
        Command::Attack(args) => {
            let (cfg, out) = setup(&args)?;
            let spec = cfg
                .attack
                .clone()
                .ok_or_else(|| ConfigError::Invalid("config has no \"attack\" section".into()))?;
            let opts = RunOptions {
                out: out.clone(),
                reuse_model: args.reuse_model.clone(),
            };
            let result = run_attack_pipeline(&cfg.experiment(), &spec, &opts);
            snapshot(&cfg, &out);
            print_cells(
                &result?,
                &["fooling_ratio", "mean_feature_change", "mean_jsd", "correlation_diff"],
            );
            Ok(())
        }
        Command::Augment(args) => {
            let (cfg, out) = setup(&args)?;
            let spec = cfg
                .augmentation
                .clone()
                .ok_or_else(|| ConfigError::Invalid("config has no \"augmentation\" section".into()))?;
            let opts = RunOptions {
                out: out.clone(),
                reuse_model: None,
            };
            let result = run_augmentation_pipeline(&cfg.experiment(), &spec, &opts);
            snapshot(&cfg, &out);
            print_cells(&result?, &["auroc", "accuracy"]);
            Ok(())
        }
        Command::Synth(args) => {
            let (cfg, out) = setup(&args)?;
            let spec = cfg.synthetic()?;
            for p in write_synthetic(spec, cfg.seed, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn setup(args: &RunArgs) -> Result<(RunConfig, PathBuf), Failure> {
    let cfg = RunConfig::load(&args.config)?.with_seed(args.seed);
    let out = cfg.run_dir(args.out.as_deref())?;
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(ConfigError::Invalid("--workers must be at least 1".into()).into());
        }
        rayon_pool(n)?;
    }
    Ok((cfg, out))
}

fn rayon_pool(n: usize) -> Result<(), ConfigError> {
    rdsa_core::configure_threads(n).map_err(|e| ConfigError::Invalid(format!("cannot start {n} workers: {e}")))
}

/// Records the effective configuration next to the run's artifacts.
fn snapshot(cfg: &RunConfig, out: &Path) {
    if out.is_dir() {
        if let Ok(text) = serde_json::to_string_pretty(cfg) {
            let _ = std::fs::write(out.join("config.json"), text + "\n");
        }
    }
}

fn print_cells(result: &SweepResult, metrics: &[&str]) {
    for c in &result.cells {
        let mut line = format!("{:<32} runs={:<4}", c.config, c.runs);
        for m in metrics {
            if let Some(a) = c.get(m) {
                line.push_str(&format!(" {m}={:.4}±{:.4}", a.mean, a.rms));
            }
        }
        println!("{line}");
    }
    println!("{}", result.run_dir.display());
}
