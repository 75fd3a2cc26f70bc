use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use scopeprobe::{
    cmd_analyze, cmd_hs, cmd_report, cmd_score, cmd_validate, exit, AnalyzeOptions, CliError, Overrides, Run,
};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "scopeprobe", version, about = "Quantifier-scope probing of language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the bootstrap seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the softmax temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Restrict to these backend ids (repeatable).
    #[arg(long = "backend", value_name = "ID")]
    backends: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate stimuli, judgments and backends; write manifest.json.
    Validate(Common),
    /// Score every (backend, item, condition); resumes from existing scores.
    Score(Common),
    /// Preference proportions, surprisal comparisons and regressions.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Exclude items with missing scores instead of failing.
        #[arg(long)]
        allow_missing: bool,
    },
    /// Human Similarity cells and ANOVA.
    Hs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        allow_missing: bool,
    },
    /// Assemble report.md from the stage outputs.
    Report(Common),
}

fn load(common: &Common) -> Result<Run, CliError> {
    let overrides = Overrides {
        seed: common.seed,
        tau: common.tau,
        backends: common.backends.clone(),
    };
    Run::load(&common.config, &overrides)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate(c) => {
            let report = cmd_validate(&load(&c)?)?;
            println!("ok: {} items, {} backend(s)", report.combined.total(), report.backends.len());
            Ok(exit::OK)
        }
        Command::Score(c) => {
            let summary = cmd_score(&load(&c)?)?;
            println!(
                "{} new record(s), {} total, {} failed item(s)",
                summary.new_records,
                summary.total_records,
                summary.failures.len()
            );
            for f in &summary.failures {
                eprintln!("failed: {}", f.message);
            }
            Ok(summary.exit_code())
        }
        Command::Analyze { common, allow_missing } => {
            let s = cmd_analyze(&load(&common)?, AnalyzeOptions { allow_missing })?;
            println!(
                "{} paired item(s), {} tie(s), {} excluded, {} model(s) fitted",
                s.paired_items, s.ties, s.excluded_items, s.models_fitted
            );
            Ok(exit::OK)
        }
        Command::Hs { common, allow_missing } => {
            let s = cmd_hs(&load(&common)?, AnalyzeOptions { allow_missing })?;
            println!("{} HS cell(s) from {} item comparison(s)", s.cells, s.items);
            Ok(exit::OK)
        }
        Command::Report(c) => {
            let path = cmd_report(&load(&c)?)?;
            println!("{}", path.display());
            Ok(exit::OK)
        }
    }
}

fn main() -> anyhow::Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .without_time()
        .try_init()
        .map_err(|e| anyhow::anyhow!(e))
        .context("initializing logging")?;
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    Ok(ExitCode::from(u8::try_from(code).unwrap_or(1)))
}
