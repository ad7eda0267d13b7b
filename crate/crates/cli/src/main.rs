//! `msr`: config-driven weak-supervision experiments.
//!
//! Exit codes: 0 success, 1 configuration error (bad flags, unparseable or
//! invalid config, bad input data), 2 aborted execution (non-finite
//! training losses, write failures).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use msr_cli::config::{ConfigError, ExperimentConfig, Overrides};
use msr_cli::runner::{
    ablate_experiment, dataset_stats, generate_to_file, run_experiment, RunError,
};

#[derive(Parser)]
#[command(name = "msr", about = "Weak-supervision training experiments", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunFlags {
    /// Comma-separated run seeds, overriding the config's `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory, overriding the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel seed workers, overriding the config's `workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Subsample the validation split to this many rows before training.
    #[arg(long)]
    val_size: Option<usize>,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            workers: self.workers,
            val_size: self.val_size,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured method across seeds and write per-seed artifacts
    /// plus summary.json.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run the 2x2 ablation grid over the teacher scheduler and the
    /// confidence filter.
    Ablate {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Generate the synthetic corpus described by a config's data.synth.*
    /// keys and write it as JSONL.
    Gen { spec: PathBuf, out: PathBuf },
    /// Print corpus statistics of a JSONL dataset.
    Stats { data: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

enum CliError {
    Config(ConfigError),
    Run(RunError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::Run(e) => e.fmt(f),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Run(e) => e.exit_code(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        CliError::Run(e)
    }
}

fn load(config: &PathBuf, flags: &RunFlags) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    cfg.apply(&flags.overrides())?;
    Ok(cfg)
}

/// Print without panicking when the reader closes the pipe early.
fn emit(text: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run { config, flags } => {
            let cfg = load(&config, &flags)?;
            let summary = run_experiment(&cfg)?;
            let mean = summary.mean.test_accuracy.unwrap_or(f64::NAN);
            let std = summary.std.test_accuracy.unwrap_or(f64::NAN);
            emit(format!(
                "{}: {} seeds, mean test accuracy {:.4} +/- {:.4} -> {}",
                summary.method,
                summary.seeds.len(),
                mean,
                std,
                cfg.out.join("summary.json").display(),
            ));
            Ok(())
        }
        Cmd::Ablate { config, flags } => {
            let cfg = load(&config, &flags)?;
            let summary = ablate_experiment(&cfg)?;
            for v in &summary.variants {
                emit(format!(
                    "{}: student {:.4} teacher {}",
                    v.name,
                    v.mean.test_accuracy.unwrap_or(f64::NAN),
                    v.mean
                        .teacher_test_accuracy
                        .map_or("n/a".to_string(), |t| format!("{t:.4}")),
                ));
            }
            emit(format!("-> {}", cfg.out.join("summary.json").display()));
            Ok(())
        }
        Cmd::Gen { spec, out } => {
            let cfg = ExperimentConfig::from_file(&spec)?;
            let info = generate_to_file(&cfg, &out)?;
            emit(serde_json::to_string_pretty(&info).expect("stable json"));
            Ok(())
        }
        Cmd::Stats { data } => {
            let info = dataset_stats(&data)?;
            emit(serde_json::to_string_pretty(&info).expect("stable json"));
            Ok(())
        }
    }
}
