//! Command-line experiments: train, sample, transport and evaluate.
//!
//! Every command reads one [`config::ExperimentConfig`], writes its outputs
//! into a single directory and finishes with a `manifest.json` naming the
//! config digest, seeds and the digest of every file written.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use gaf_core::Schedule;

use crate::commands::Context;
use crate::config::ExperimentConfig;
use crate::output::OutDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    /// One JSON object on one line.
    pub fn line(&self) -> String {
        let kind = match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        };
        serde_json::json!({ "error": kind, "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "gaf", version, about = "Twin endpoint generative models on synthetic 2D data")]
pub struct Cli {
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.iterations=500`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Checkpoint to load (resume for `train`).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Integration steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true, value_parser = parse_schedule)]
    pub schedule: Option<Schedule>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    s.parse::<Schedule>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Train on the configured dataset; writes a checkpoint and loss log.
    Train,
    /// Per-class samples and a scatter image.
    Sample,
    /// Pairwise interpolation frames.
    Interp,
    /// Cyclic transport frames and closure report.
    Cycle,
    /// Barycentric grid over three classes.
    Bary,
    /// Distribution metrics and diagnostics.
    Eval,
    /// Energy distance against the number of integration steps.
    StepsSweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Interp => "interp",
            Command::Cycle => "cycle",
            Command::Bary => "bary",
            Command::Eval => "eval",
            Command::StepsSweep => "steps-sweep",
        }
    }
}

/// Builds the resolved config from file, overrides and flags.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = cli.steps {
        cfg.sample.steps = steps;
    }
    if let Some(s) = cli.schedule {
        cfg.sample.schedule = s;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = Some(out.clone());
    }
    cfg.resolve()
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = resolve_config(cli)?;
    let dir = config
        .output
        .dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cli.command.name()));
    let needs_checkpoint = matches!(
        cli.command,
        Command::Sample | Command::Interp | Command::Cycle | Command::Bary | Command::StepsSweep
    );
    if needs_checkpoint && cli.checkpoint.is_none() {
        return Err(CliError::Config(format!("{} requires --checkpoint", cli.command.name())));
    }
    let ctx = Context {
        config,
        checkpoint: cli.checkpoint.as_deref(),
        out: OutDir::create(&dir)?,
    };
    match cli.command {
        Command::Train => commands::train(ctx),
        Command::Sample => commands::sample(ctx),
        Command::Interp => commands::interp(ctx),
        Command::Cycle => commands::cycle(ctx),
        Command::Bary => commands::bary(ctx),
        Command::Eval => commands::eval(ctx),
        Command::StepsSweep => commands::steps_sweep(ctx),
    }
}

/// Runs one command; `argv[0]` is the program name.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", CliError::Config(first.trim_start_matches("error: ").to_owned()).line());
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
