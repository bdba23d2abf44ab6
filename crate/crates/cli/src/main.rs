use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::{parse_overrides, RunConfig};

/// Train and analyze Tikhonov-regularized LSTM regressors.
#[derive(Parser, Debug)]
#[command(name = "lstm-tikhonov", version)]
struct Cli {
    /// Worker threads for batch gradients and perturbation trials.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint.json, metrics.csv and robustness.csv.
    Train(RunArgs),
    /// Measure test MSE under input noise and write robustness.csv.
    Eval(ModelArgs),
    /// Monte-Carlo check of the perturbation bounds; writes perturb_report.json
    /// and perturb_table.csv. Fails if a per-step inequality is violated.
    VerifyBounds(ModelArgs),
    /// Print the regularizer coefficients of a checkpoint.
    InspectReg(InspectArgs),
    /// Write the configured dataset as CSV.
    GenData(GenArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (same as `--out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration overrides as `--section.key value`, after all other flags.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model checkpoint. verify-bounds draws a random feasible model without one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Destination CSV file.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

impl RunArgs {
    /// Config with overrides applied. `require_seed` insists on a seed from
    /// the command line, either `--seed` or a trailing `--seed` override.
    fn resolve(&self, require_seed: bool) -> Result<RunConfig> {
        let overrides = parse_overrides(&self.overrides)?;
        let cli_seed = overrides.iter().any(|(k, _)| k == "seed") || self.seed.is_some();
        if require_seed && !cli_seed {
            anyhow::bail!("--seed is required for this command");
        }
        let mut config = RunConfig::load(self.config.as_deref(), &overrides)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .context("starting thread pool")?;
    match cli.command {
        Command::Train(a) => commands::train(&a.resolve(true)?),
        Command::Eval(a) => commands::eval(&a.run.resolve(false)?, a.checkpoint.as_deref()),
        Command::VerifyBounds(a) => commands::verify_bounds(&a.run.resolve(true)?, a.checkpoint.as_deref()),
        Command::InspectReg(a) => {
            commands::inspect_reg(&a.run.resolve(false)?, &a.checkpoint, matches!(a.format, Format::Json))
        }
        Command::GenData(a) => commands::gen_data(&a.run.resolve(false)?, &a.output),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
