use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use famtune::fixtures;
use famtune_cli::{execute, parse_config, replay, Command, Flags};

#[derive(Parser)]
#[command(name = "famtune", version, about = "Family-aware auto-tuning on simulated latency landscapes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one tuning policy and write its tuning curve
    Tune(Flags),
    /// Run both policies on the same landscapes and compare budgets at 80/90/100%
    Compare(Flags),
    /// Cross-subgraph cost-model accuracy matrix
    Heatmap(Flags),
    /// Monolithic versus per-subgraph cost-model accuracy
    Bars(Flags),
    /// Per-subgraph budget allocation of one tuning run
    Report(Flags),
    /// Print a built-in model as JSON
    Fixture {
        /// One of bert-large, resnet50, tiny, small-space
        name: String,
    },
    /// Re-run a manifest and verify every output digest
    Replay {
        manifest: PathBuf,
        /// Write into this directory instead of the recorded one
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let (command, flags) = match cli.command {
        Cmd::Tune(f) => (Command::Tune, f),
        Cmd::Compare(f) => (Command::Compare, f),
        Cmd::Heatmap(f) => (Command::Heatmap, f),
        Cmd::Bars(f) => (Command::Bars, f),
        Cmd::Report(f) => (Command::Report, f),
        Cmd::Fixture { name } => {
            let model = fixtures::by_name(&name)
                .with_context(|| format!("unknown fixture {name:?}; known: {}", fixtures::NAMES.join(", ")))?;
            print!("{}", model.to_json());
            return Ok(true);
        }
        Cmd::Replay { manifest, out_dir } => return Ok(replay(&manifest, out_dir)?.passed),
    };
    let config = parse_config(&flags)?;
    Ok(execute(command, &config)?.passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
