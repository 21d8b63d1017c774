//! Command-line front end: training, evaluation, few-shot adaptation,
//! interactive play and report aggregation.

pub mod commands;
pub mod config;
mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "thespian", version, about = "Multi-character text-game agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a multi-character core, one run per seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint under one or more prompts.
    Eval(EvalArgs),
    /// Adapt a trained core to a new character within a step budget.
    Fewshot(FewshotArgs),
    /// Play a world from the terminal.
    Play(PlayArgs),
    /// Aggregate evaluation CSVs into a summary table.
    Report(ReportArgs),
}

/// Options shared by the training commands. Flags override the config file.
#[derive(Debug, Args, Default)]
pub struct RunOptions {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// World file, or `builtin:<name>`.
    #[arg(long)]
    pub world: Option<String>,
    /// Seeds, comma separated.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOptions,
    /// Characters to train, comma separated (default: every character of the world).
    #[arg(long)]
    pub characters: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Ablation: one head with a zero prompt trained on all characters.
    #[arg(long)]
    pub single_head: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Core checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// World file, or `builtin:<name>`.
    #[arg(long)]
    pub world: String,
    /// Prompt to evaluate: a character name or `random`. Repeatable;
    /// default is every character followed by `random`.
    #[arg(long = "prompt")]
    pub prompts: Vec<String>,
    /// Slot whose projection and heads a random prompt drives (default: first).
    #[arg(long)]
    pub slot: Option<String>,
    /// Games in total, split over the seeds.
    #[arg(long, default_value_t = 100)]
    pub games: usize,
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// CSV file for the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Frozen core, attention module and new prompt only.
    Frozen,
    /// Fine-tune every weight with a fresh slot.
    Unfrozen,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    #[command(flatten)]
    pub run: RunOptions,
    /// Pre-trained core checkpoint.
    #[arg(long)]
    pub core: PathBuf,
    /// The new character.
    #[arg(long)]
    pub character: String,
    /// Environment step budget.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Frozen)]
    pub mode: Mode,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    /// World file, or `builtin:<name>`.
    #[arg(long)]
    pub world: String,
    /// Character whose reward is scored (default: first of the world).
    #[arg(long)]
    pub character: Option<String>,
    /// Show each head's five likeliest verbs from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation CSVs written by `eval`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

/// Runs a parsed command. Interactive input comes from `input`; everything
/// meant for the user goes to `output`.
pub fn run(
    cli: Cli,
    input: &mut dyn std::io::BufRead,
    output: &mut dyn std::io::Write,
) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a, output),
        Command::Eval(a) => commands::eval(&a, output),
        Command::Fewshot(a) => commands::fewshot(&a, output),
        Command::Play(a) => commands::play(&a, input, output),
        Command::Report(a) => commands::report(&a, output),
    }
}
