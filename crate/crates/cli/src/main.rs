//! Command-line front end: train, eval, figures, bench and synth.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Figure;
use config::RunConfig;
use data::{Stage, StageError};

#[derive(Parser)]
#[command(name = "fsdh", version, about = "Supervised hashing with Hadamard class codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the kernel map and a hash model, then write model.fsdh
    Train(Common),
    /// Encode database and queries with a saved model and report retrieval metrics
    Eval {
        /// Model file written by `train`
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Produce the data behind one of the diagnostic figures
    Figures {
        #[arg(value_enum)]
        figure: Figure,
        #[command(flatten)]
        common: Common,
    },
    /// Per-stage training time over code lengths and anchor counts
    Bench(Common),
    /// Write the synthetic blob dataset as CSV
    Synth(Common),
    /// Print every config key with its default and description
    Defaults,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one setting (repeatable)
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    bits: Option<String>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, StageError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("{}: {e}", path.display()))
                .stage("config")?;
            cfg.apply_text(&text)
                .map_err(|e| format!("{}: {e}", path.display()))
                .stage("config")?;
        }
        let shortcuts = [
            ("method", &self.method),
            ("bits", &self.bits),
            ("source", &self.source),
            ("seed", &self.seed),
        ];
        for (key, value) in shortcuts {
            if let Some(v) = value {
                cfg.set(key, v).stage("config")?;
            }
        }
        if let Some(out) = &self.output {
            cfg.output = out.clone();
        }
        for pair in &self.set {
            cfg.apply_override(pair).stage("config")?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Train(c) => commands::train(&c.resolve()?),
        Command::Eval { model, common } => commands::eval(&common.resolve()?, &model),
        Command::Figures { figure, common } => commands::figures(&common.resolve()?, figure),
        Command::Bench(c) => commands::bench(&c.resolve()?),
        Command::Synth(c) => commands::synth(&c.resolve()?),
        Command::Defaults => {
            let defaults = RunConfig::default().to_text();
            for (line, (_, doc)) in defaults.lines().zip(RunConfig::SCHEMA) {
                println!("{line:<40} # {doc}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
