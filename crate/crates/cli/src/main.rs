mod commands;
mod config;
mod records;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Ctx, UsageError};
use config::{ConfigArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "patch-critic",
    version,
    about = "Execution-free evaluation of candidate patches"
)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate the dataset and sidecars; writes instances.jsonl.
    Ingest,
    /// Extract unseen tests from each gold test patch; writes tests.jsonl.
    ExtractTests,
    /// Widen candidate hunks to whole functions; writes enhanced.jsonl.
    Enhance,
    /// Run critic variants and baselines; writes verdicts/<variant>.jsonl.
    Evaluate {
        /// Critic variant, `random` or `edit_distance`; repeatable.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Turn verdicts into build predictions, with and without the policy.
    Aggregate,
    /// Rank workflows per instance by predicted pass rate.
    Rank {
        /// Build predictions to rank (a file stem under builds/).
        #[arg(long, default_value = "isolated_test_patch")]
        variant: String,
    },
    /// Score every build-prediction set against the labels.
    Report {
        /// Ranking to summarize (a file stem under rankings/).
        #[arg(long, default_value = "isolated_test_patch")]
        rank_variant: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::ExtractTests => "extract-tests",
            Command::Enhance => "enhance",
            Command::Evaluate { .. } => "evaluate",
            Command::Aggregate => "aggregate",
            Command::Rank { .. } => "rank",
            Command::Report { .. } => "report",
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&cli.config).map_err(|e| UsageError(format!("{e:#}")))?;
    let ctx = Ctx::load(cfg)?;
    match &cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::ExtractTests => commands::extract_tests(&ctx),
        Command::Enhance => commands::enhance(&ctx),
        Command::Evaluate { variants } => commands::evaluate(&ctx, variants),
        Command::Aggregate => commands::aggregate(&ctx),
        Command::Rank { variant } => commands::rank(&ctx, variant),
        Command::Report { rank_variant } => commands::report(&ctx, rank_variant),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            let message = format!("{e:#}");
            eprintln!("error: {message}");
            let record = serde_json::json!({
                "error": {
                    "command": cli.command.name(),
                    "kind": if usage { "usage" } else { "runtime" },
                    "message": message,
                }
            });
            eprintln!("{record}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
