mod artifacts;
mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use artifacts::Workspace;
use commands::ModelKind;
use config::{FitData, Overrides, RunConfig};
use error::CliError;

/// Annotator demographics, token attribution and persona/highlight LLM
/// annotation experiments on sexism-labelled tweets.
#[derive(Debug, Parser)]
#[command(name = "annotrel", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the global `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeat for trace level).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate, filter and split the corpus.
    Ingest,
    /// Inverse-frequency observation weights.
    Weights,
    /// Label agreement statistics.
    Agreement,
    /// Fit the flat or mixed-effects logistic model.
    Fit {
        #[arg(value_enum)]
        model: ModelKind,
        /// Fit data source; overrides `glmm.data`.
        #[arg(long, value_enum)]
        data: Option<FitData>,
    },
    /// Token attributions and importance tables.
    Attribute,
    /// Query the configured models for every scenario.
    Run,
    /// Score a result store and emit evaluation tables.
    Report,
}

fn execute(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let overrides = Overrides { output_dir: cli.output_dir.clone(), seed: cli.seed };
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let ws = Workspace::open(&config.output_dir)?;
    match &cli.command {
        Command::Ingest => commands::ingest(&config, &ws),
        Command::Weights => commands::weights(&ws),
        Command::Agreement => commands::agreement(&ws),
        Command::Fit { model, data } => commands::fit(&config, &ws, *model, *data),
        Command::Attribute => commands::attribute_cmd(&config, &ws),
        Command::Run => commands::run(&config, &ws),
        Command::Report => commands::report(&config, &ws),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match execute(&cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
