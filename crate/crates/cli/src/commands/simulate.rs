use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use todsim_core::agents::Role;
use todsim_core::data_io;
use todsim_core::metrics::MetricReport;
use todsim_core::orchestrator::{rollout_tsr, SimConfig, Simulator};
use todsim_core::Episode;

use super::{abs, write_json};
use crate::agents::{self, AgentSpec};
use crate::config::{overlay, overlay_opt, required, ConfigFile};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::Outcome;

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const PROGRESS_FILE: &str = "progress.tsv";

#[derive(Debug, Clone, Default, clap::Args)]
pub struct SimulateArgs {
    /// JSONL file of goals.
    #[arg(long)]
    pub goals: Option<PathBuf>,
    /// JSONL lookup table.
    #[arg(long)]
    pub api_table: Option<PathBuf>,
    /// Base URL of an API server, instead of a table.
    #[arg(long)]
    pub api_url: Option<String>,
    /// scripted | exemplar:<path> | remote:<url>
    #[arg(long)]
    pub user_agent: Option<String>,
    /// scripted | exemplar:<path> | remote:<url>
    #[arg(long)]
    pub assistant_agent: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub schema_aware: Option<bool>,
    /// Dialogues per goal.
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// nucleus | greedy
    #[arg(long)]
    pub decode: Option<String>,
    /// Nucleus mass.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Chance that each goal slot reaches the User corrupted.
    #[arg(long)]
    pub user_noise: Option<f64>,
    /// Chance that each slot of an Assistant API call is corrupted.
    #[arg(long)]
    pub assistant_noise: Option<f64>,
    /// Leave errored rollouts out of the success rate.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub exclude_errors: Option<bool>,
    /// PhraseBook JSON for scripted agents.
    #[arg(long)]
    pub phrasebook: Option<PathBuf>,
    /// JSON object mapping intents to domain labels.
    #[arg(long)]
    pub domain_map: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub goals: Option<PathBuf>,
    pub api_table: Option<PathBuf>,
    pub api_url: Option<String>,
    pub user_agent: String,
    pub assistant_agent: String,
    pub schema_aware: bool,
    pub rollouts: usize,
    pub decode: String,
    pub p: f64,
    pub seed: u64,
    pub max_rounds: usize,
    pub user_noise: f64,
    pub assistant_noise: f64,
    pub exclude_errors: bool,
    pub phrasebook: Option<PathBuf>,
    pub domain_map: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            goals: None,
            api_table: None,
            api_url: None,
            user_agent: "scripted".into(),
            assistant_agent: "scripted".into(),
            schema_aware: sim.schema_aware,
            rollouts: sim.rollouts_per_goal,
            decode: "nucleus".into(),
            p: sim.decode.p,
            seed: 0,
            max_rounds: sim.max_rounds,
            user_noise: 0.0,
            assistant_noise: 0.0,
            exclude_errors: false,
            phrasebook: None,
            domain_map: None,
            out: None,
        }
    }
}

pub fn resolve(file: &ConfigFile, args: &SimulateArgs) -> Result<SimulateSettings, CliError> {
    let mut s: SimulateSettings = file.section("simulate")?;
    overlay!(s, args; user_agent, assistant_agent, schema_aware, rollouts, decode, p, seed, max_rounds,
        user_noise, assistant_noise, exclude_errors);
    overlay_opt!(s, args; goals, api_table, api_url, phrasebook, domain_map, out);
    s.goals = abs(&s.goals);
    s.api_table = abs(&s.api_table);
    s.phrasebook = abs(&s.phrasebook);
    s.domain_map = abs(&s.domain_map);
    s.out = abs(&s.out);
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateMetrics {
    #[serde(flatten)]
    pub report: MetricReport,
    pub n_rollouts: usize,
    pub n_errors: usize,
    pub schema_aware: bool,
}

pub fn run(s: SimulateSettings, jobs: usize) -> Result<Outcome, CliError> {
    let goals_path = required(&s.goals, "goals")?;
    let out = required(&s.out, "out")?.clone();
    let user_spec = AgentSpec::parse(&s.user_agent)?;
    let assistant_spec = AgentSpec::parse(&s.assistant_agent)?;
    let cfg = SimConfig {
        max_rounds: s.max_rounds,
        rollouts_per_goal: s.rollouts,
        decode: agents::decode(&s.decode, s.p, s.seed)?,
        schema_aware: s.schema_aware,
        exclude_errors: s.exclude_errors,
    };
    cfg.validate()?;
    let mut manifest = RunManifest::start("simulate", &s).seed("batch", s.seed);

    agents::check_input(goals_path)?;
    let goals = data_io::load_goals(goals_path)?;
    if goals.is_empty() {
        return Err(CliError::Data(format!("{}: no goals", goals_path.display())));
    }
    let api = agents::api_backend(s.api_table.as_deref(), s.api_url.as_deref())?;
    let book = agents::phrasebook(s.phrasebook.as_deref())?;
    let domains = agents::domain_map(s.domain_map.as_deref())?;
    let user = agents::with_noise(user_spec.build(todsim_core::agents::Role::User, &book)?, s.user_noise)?;
    let assistant = agents::with_noise(assistant_spec.build(Role::Assistant, &book)?, s.assistant_noise)?;
    manifest.input("goals", Some(goals_path));
    manifest.input("api_table", s.api_table.as_deref());
    manifest.input("phrasebook", s.phrasebook.as_deref());
    manifest.input("domain_map", s.domain_map.as_deref());
    manifest.input("user_agent", user_spec.input_path());
    manifest.input("assistant_agent", assistant_spec.input_path());

    let sim = Simulator::new(&*user, &*assistant, &*api, &domains);
    let rollouts = agents::with_jobs(jobs, || sim.run_batch(&goals, &cfg))?;
    let n_errors = rollouts.iter().filter(|r| r.error.is_some()).count();
    if n_errors == rollouts.len() {
        let first = rollouts[0].error.as_ref().expect("every rollout errored");
        return Err(CliError::Agent(format!("every rollout failed, first: {first}")));
    }
    let episodes: Vec<Episode> = rollouts.iter().map(|r| r.episode.clone()).collect();
    let mut report = MetricReport::from_episodes(&episodes)?;
    if let Some(tsr) = rollout_tsr(&rollouts, cfg.exclude_errors) {
        report.tsr = tsr;
    }
    let metrics = SimulateMetrics {
        report,
        n_rollouts: rollouts.len(),
        n_errors,
        schema_aware: cfg.schema_aware,
    };

    let episodes_path = out.join(EPISODES_FILE);
    let metrics_path = out.join(METRICS_FILE);
    let progress_path = out.join(PROGRESS_FILE);
    data_io::write_episodes(&episodes_path, &episodes)?;
    write_json(&metrics_path, &metrics)?;
    let mut progress = String::from("goal_idx\trollout_idx\tsuccess\tn_turns\n");
    for r in &rollouts {
        progress.push_str(&r.progress_line());
        progress.push('\n');
    }
    std::fs::write(&progress_path, progress).map_err(|e| CliError::io(&progress_path, e))?;
    manifest.output("episodes", &episodes_path);
    manifest.output("metrics", &metrics_path);
    manifest.output("progress", &progress_path);
    manifest.finish(&out)?;

    let mut text = metrics.report.to_table();
    text.push_str(&format!("errors              {n_errors}\nout                 {}\n", out.display()));
    Ok(Outcome::new(text, &metrics))
}
