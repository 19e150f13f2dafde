use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] binar::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(field: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("config field `{field}`: {msg}"))
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Binomial AR(1) simulation, estimation and sequential change detection.
#[derive(Debug, Parser)]
#[command(name = "binar", version)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Master seed; overrides the config file.
    #[arg(long, global = true, env = "BINAR_SEED")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "BINAR_THREADS")]
    threads: Option<usize>,
    /// Suppress the summary printed on success.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a series from `[model]` and `[simulate]`.
    Simulate,
    /// Fit the model to the series named in `[fit]`.
    Fit,
    /// Monte-Carlo thresholds from `[calibrate]`.
    Calibrate,
    /// Run the detector described in `[monitor]`; exit code 3 on alarm.
    Monitor,
    /// Replicated simulation study from `[experiment]`.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
    },
    /// Turn the rate panel in `[prep]` into a binomial series.
    Prep,
    /// Constant-π binomial vs AR(1) comparison for `[compare]`.
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Consistency,
    Normality,
    Size,
    Power,
}

/// Resolved global options.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub quiet: bool,
}

impl Context {
    pub fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub const DEFAULT_SEED: u64 = 1;

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(config.threads);
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::io(&cli.out, e))?;
    let ctx = Context {
        seed: cli.seed.or(config.seed).unwrap_or(DEFAULT_SEED),
        config,
        out: cli.out,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Fit => commands::fit(&ctx),
        Command::Calibrate => commands::calibrate(&ctx),
        Command::Monitor => commands::monitor(&ctx),
        Command::Experiment { kind } => commands::experiment(&ctx, kind),
        Command::Prep => commands::prep(&ctx),
        Command::Compare => commands::compare(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
