//! The `todsim` command line. [`run`] executes parsed arguments and returns
//! what the command wants printed; `main` maps errors to exit codes.

pub mod agents;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::commands::{bootstrap, data, eval, serve, simulate};
use crate::config::ConfigFile;
pub use crate::error::CliError;
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "todsim", version, about = "Task-oriented dialogue simulation")]
pub struct Cli {
    /// TOML file with one table of settings per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for rollouts (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run User/Assistant dialogues for a goal file and score them.
    Simulate(simulate::SimulateArgs),
    /// Success-filtered self-training over several iterations.
    Bootstrap(bootstrap::BootstrapArgs),
    /// Rank schemas on a generation batch and pick human conversations to add.
    Al(bootstrap::AlArgs),
    /// Join bootstrap iteration metrics into one table.
    Report(bootstrap::ReportArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
    /// Build pairwise evaluation tasks from system runs.
    EvalTasks(eval::EvalTasksArgs),
    /// Serve pairwise evaluation tasks to annotators.
    EvalServe(eval::EvalServeArgs),
    /// Write a synthetic corpus from the built-in fixture worlds.
    Fixture(data::FixtureArgs),
    /// Build an API lookup table from episodes.
    BuildTable(data::BuildTableArgs),
    /// Import dialogues in the simplified SGD-style layout.
    ImportSgd(data::ImportSgdArgs),
    /// Split episodes into in-domain and held-out domains.
    Split(data::SplitArgs),
    /// Extract single goals from episodes.
    ExtractGoals(data::ExtractGoalsArgs),
    /// Serve an API lookup table over HTTP.
    ServeApi(serve::ServeApiArgs),
    /// Serve an agent over HTTP.
    ServeAgent(serve::ServeAgentArgs),
    /// Talk to an assistant from the terminal (debugging aid).
    Play(serve::PlayArgs),
}

#[derive(Debug, clap::Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the repeat; defaults to the original one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a command prints: `text` normally, `json` under `--json`.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub text: String,
    pub json: serde_json::Value,
}

impl Outcome {
    pub fn new(text: impl Into<String>, json: &impl Serialize) -> Self {
        Self {
            text: text.into(),
            json: serde_json::to_value(json).expect("outcomes serialize"),
        }
    }

    pub fn render(&self, json: bool) -> String {
        if json {
            serde_json::to_string_pretty(&self.json).expect("json value") + "\n"
        } else {
            self.text.clone()
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let jobs = cli.jobs;
    match cli.command {
        Command::Simulate(a) => simulate::run(simulate::resolve(&file, &a)?, jobs),
        Command::Bootstrap(a) => bootstrap::run(bootstrap::resolve(&file, &a)?, jobs),
        Command::Al(a) => bootstrap::run_al(&a),
        Command::Report(a) => bootstrap::run_report(&a),
        Command::Rerun(a) => rerun(&a, jobs),
        Command::EvalTasks(a) => eval::run_tasks(&a),
        Command::EvalServe(a) => eval::run_serve(&a),
        Command::Fixture(a) => data::run_fixture(&a),
        Command::BuildTable(a) => data::run_build_table(&a),
        Command::ImportSgd(a) => data::run_import_sgd(&a),
        Command::Split(a) => data::run_split(&a),
        Command::ExtractGoals(a) => data::run_extract_goals(&a),
        Command::ServeApi(a) => serve::run_serve_api(&a),
        Command::ServeAgent(a) => serve::run_serve_agent(&a),
        Command::Play(a) => serve::run_play(&a),
    }
}

/// Parses `args` (program name first) and runs them.
pub fn run_args<I, S>(args: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli)
}

fn rerun(args: &RerunArgs, jobs: usize) -> Result<Outcome, CliError> {
    let m = RunManifest::load(&args.manifest)?;
    match m.command.as_str() {
        "simulate" => {
            let mut s: simulate::SimulateSettings = m.settings()?;
            if let Some(out) = &args.out {
                s.out = Some(manifest_path(out));
            }
            simulate::run(s, jobs)
        }
        "bootstrap" => {
            let mut s: bootstrap::BootstrapSettings = m.settings()?;
            if let Some(out) = &args.out {
                s.out = Some(manifest_path(out));
            }
            bootstrap::run(s, jobs)
        }
        other => Err(CliError::Usage(format!("cannot rerun a {other:?} manifest"))),
    }
}

/// Absolute form of `p`, so manifests stay valid from any directory.
pub fn manifest_path(p: &std::path::Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
