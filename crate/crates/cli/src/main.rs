//! Command-line front end: corpus generation, training, evaluation,
//! strategy comparison, error analysis and an interactive tracker.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msp_dst::DstError;

use config::{Overrides, RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "msp-dst", version, about = "Dialogue state tracking with a mentioned slot pool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a phenomenon sidecar
    GenData,
    /// Train a tracker and write its checkpoint and history
    Train,
    /// Track a split and write the report, trace and predicted states
    Eval,
    /// Score trained checkpoints of several strategies and seeds
    Compare,
    /// Inherit and error analysis of an evaluation trace
    Analyze,
    /// Track typed dialogue: agent line, then user line
    Repl,
}

/// Input and configuration problems exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<DstError>() {
        Some(
            DstError::Config(_)
            | DstError::Io { .. }
            | DstError::Malformed { .. }
            | DstError::EmptySchema
            | DstError::InvalidSchema(_)
            | DstError::InvalidDialogue { .. }
            | DstError::Checkpoint(_),
        ) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval => commands::eval_cmd(&cfg),
        Command::Compare => commands::compare_cmd(&cfg),
        Command::Analyze => commands::analyze_cmd(&cfg),
        Command::Repl => commands::repl_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MSP_DST_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
