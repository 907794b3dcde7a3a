use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lail_core::selection::ShotOrder;

mod config;
mod error;
mod stages;

use config::PipelineConfig;
use error::CliError;
use stages::Ctx;

#[derive(Parser)]
#[command(
    name = "lail",
    version,
    about = "LLM-aware in-context example selection for code generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set label.t=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Use `<dir>/{train,dev,test}.jsonl` instead of the configured dataset.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Retriever checkpoint (defaults to `<output_dir>/checkpoint.json`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = ["asc", "desc"])]
    shot_order: Option<String>,
    /// Proceed despite an embedder fingerprint mismatch.
    #[arg(long)]
    force: bool,
    /// Allow the subprocess verdict runner to execute generated programs.
    #[arg(long)]
    i_understand_execution_risk: bool,
    /// Baseline strategy for relative improvements.
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and check the dataset.
    Validate(Common),
    /// Score candidates with the LLM and write labels.jsonl.
    Label(Common),
    /// Train the projection head on the labels.
    Train(Common),
    /// Embed the pool with the trained head.
    Index(Common),
    /// Select shots for every test example under each strategy.
    Retrieve(Common),
    /// Generate programs, collect verdicts and compute Pass@k.
    Eval(Common),
    /// Compare existing reports.
    Report(Common),
    /// Evaluate a checkpoint on another dataset.
    TransferEval(Common),
}

fn context(c: Common) -> Result<Ctx, CliError> {
    let mut cfg = PipelineConfig::load(&c.config, &c.overrides)?;
    if let Some(dir) = &c.dataset {
        cfg.use_dataset_dir(dir);
    }
    if let Some(order) = &c.shot_order {
        cfg.selection.shot_order = order
            .parse::<ShotOrder>()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if c.baseline.is_some() {
        cfg.eval.baseline = c.baseline;
    }
    Ok(Ctx {
        cfg,
        checkpoint: c.checkpoint,
        force: c.force,
        allow_execution: c.i_understand_execution_risk,
    })
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate(c) => stages::validate(&context(c)?),
        Command::Label(c) => stages::label(&context(c)?),
        Command::Train(c) => stages::train(&context(c)?),
        Command::Index(c) => stages::index(&context(c)?),
        Command::Retrieve(c) => stages::retrieve(&context(c)?),
        Command::Eval(c) => stages::eval(&context(c)?),
        Command::Report(c) => stages::report(&context(c)?),
        Command::TransferEval(c) => stages::transfer_eval(&mut context(c)?),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
