//! `attnguard` command-line tool.
//!
//! Exit codes: 0 success, 2 usage error, 3 bad input data, 4 internal or
//! output failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod config;
mod error;
mod io;

pub use error::CliError;

#[derive(Debug, Parser, Serialize)]
#[command(name = "attnguard", version, about = "Attention-state detection and adaptation toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Seed for randomized subcommands; generated and recorded when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with [forest], [labeler], [engine], [oulad] and [service]
    /// sections.
    #[arg(long, global = true, env = "ATTNGUARD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Primary output path when the subcommand's own output flag is absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate synthetic sessions with ground-truth state timelines.
    Simulate(SimulateArgs),
    /// Train a forest on a directory of traces.
    Train(TrainArgs),
    /// Grouped cross-validation on a directory of traces.
    Eval(EvalArgs),
    /// Run a trace through the live pipeline and write the directives.
    Replay(ReplayArgs),
    /// Agreement between wizard decisions and shadow estimates in a log.
    Concord(ConcordArgs),
    /// Serve the HTTP/WebSocket session API.
    Serve(ServeArgs),
    /// Paired or two-group statistics from a CSV.
    Stats(StatsArgs),
    /// Dysregulation scores and group comparison for a cohort.
    Cohort(CohortArgs),
    /// Label session-level clickstream features with the rule set.
    Label(LabelArgs),
    /// Write the per-window feature vectors of a trace.
    Features(FeaturesArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Generator profile TOML; the built-in default when absent.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Session length in seconds.
    #[arg(long, default_value_t = 7200)]
    pub duration: u64,
    /// Number of sessions. Above 1, `--out` names a directory.
    #[arg(long, default_value_t = 1)]
    pub sessions: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory of `*.jsonl` traces, each with an optional
    /// `*.truth.jsonl` sidecar.
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the configured tree count.
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Takes the forest settings from this model and also scores the
    /// model itself on the data.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Overrides the tree count.
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub directives_out: Option<PathBuf>,
    /// Also write the full session log.
    #[arg(long)]
    pub log_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConcordArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Recompute the shadow estimates with this model instead of using the
    /// logged ones.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Extra compatible state pairs.
    #[arg(long)]
    pub compat: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Registered as the default model.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of traces registered for replay sessions by file stem.
    #[arg(long)]
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AltArg {
    TwoSided,
    Greater,
    Less,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// CSV with columns `a,b` (paired) or `group,value` (two groups).
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long, value_enum, default_value_t = AltArg::TwoSided)]
    pub alternative: AltArg,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CohortArgs {
    /// Directory of `<participant_id>.jsonl` traces.
    #[arg(long, requires = "labels", conflicts_with = "synthetic")]
    pub dir: Option<PathBuf>,
    /// CSV with `participant_id,group` (group: adhd or control).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Generate this many participants per group instead of reading traces.
    #[arg(long, required_unless_present = "dir")]
    pub synthetic: Option<usize>,
    /// Session length for synthetic participants, in seconds.
    #[arg(long, default_value_t = 1800)]
    pub duration: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LabelArgs {
    /// Session feature CSV (student_id, click_rate_norm, duration_ratio,
    /// resource_diversity, backtracking_ratio, idle_pattern_score).
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Label each window with the rule set.
    #[arg(long)]
    pub labels: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("attnguard: {e}");
            e.exit_code()
        }
    }
}
