//! The `sfd` command line: training, SR evaluation, quality scoring, feature
//! export and small corpus/correlation utilities.

pub mod commands;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sfd", version, about = "Semantic feature discrimination for super-resolution and quality scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a TOML run config.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Replaces `total_steps` from the config.
        #[arg(long)]
        steps_override: Option<u64>,
    },
    /// Super-resolve LR images and score them against HR images of the same name.
    EvalSr {
        checkpoint: PathBuf,
        lr_dir: PathBuf,
        hr_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// No-reference quality scores for a directory or a manifest of PNG paths.
    ScoreIqa {
        checkpoint: PathBuf,
        /// Directory of PNGs, or a text file with one path per line.
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha1: Option<f64>,
        #[arg(long)]
        alpha2: Option<f64>,
        /// CSV with `image,opinion` columns; adds a correlation report.
        #[arg(long)]
        opinions: Option<PathBuf>,
    },
    /// Export spatially pooled features at one tap point as an archive.
    DumpFeatures {
        checkpoint: PathBuf,
        /// PNG files or directories of PNGs.
        #[arg(required_unless_present = "list_taps")]
        images: Vec<PathBuf>,
        #[arg(long, default_value = "feat-d-upsample-3")]
        tap: String,
        #[arg(long, required_unless_present = "list_taps")]
        out: Option<PathBuf>,
        /// Print the available tap points and exit.
        #[arg(long)]
        list_taps: bool,
    },
    /// PLCC/SRCC/KRCC between two numeric columns of a CSV file.
    Correlate {
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
    /// Write a synthetic PNG corpus for toy runs.
    SynthCorpus {
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Printed as JSON on stdout by every command.
#[derive(Debug, Serialize)]
pub struct CommandResult {
    pub command: &'static str,
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub warnings: usize,
    pub summary: serde_json::Value,
}

impl CommandResult {
    pub fn ok(command: &'static str, artifacts: Vec<PathBuf>, warnings: usize, summary: serde_json::Value) -> Self {
        Self {
            command,
            exit_code: error::EXIT_OK,
            artifacts,
            warnings,
            summary,
        }
    }
}

pub fn run(cli: Cli) -> CliResult<CommandResult> {
    match cli.command {
        Command::Train {
            config,
            seed,
            resume,
            steps_override,
        } => commands::train::run(&config, seed, resume.as_deref(), steps_override),
        Command::EvalSr {
            checkpoint,
            lr_dir,
            hr_dir,
            out,
        } => commands::eval_sr::run(&checkpoint, &lr_dir, &hr_dir, &out),
        Command::ScoreIqa {
            checkpoint,
            images,
            out,
            alpha1,
            alpha2,
            opinions,
        } => commands::score_iqa::run(&checkpoint, &images, &out, alpha1, alpha2, opinions.as_deref()),
        Command::DumpFeatures {
            checkpoint,
            images,
            tap,
            out,
            list_taps,
        } => commands::dump_features::run(&checkpoint, &images, &tap, out.as_deref(), list_taps),
        Command::Correlate { csv, x, y } => commands::correlate::run(&csv, &x, &y),
        Command::SynthCorpus { dir, count, size, seed } => commands::synth_corpus(&dir, count, size, seed),
    }
}
