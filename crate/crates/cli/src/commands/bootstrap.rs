use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use todsim_core::active_learning::{rank_schemas, select_al_batch, select_random_fewshot, AlBatch, AlLedger, LEDGER_FILE};
use todsim_core::agents::{Agent, Role};
use todsim_core::bootstrap::{
    iter_dir, Bootstrap, BootstrapConfig, BootstrapInputs, ExemplarTrainer, ExternalCommandTrainer, Injection,
    IterationReport, ModelRefs, Trainer, METRICS_FILE,
};
use todsim_core::data_io;
use todsim_core::metrics::{decimal_ratio, error_reduction, error_reduction_exact};
use todsim_core::orchestrator::SimConfig;
use todsim_core::{ApiCall, Episode};

use super::{abs, write_json};
use crate::agents::{self, AgentSpec};
use crate::config::{overlay, overlay_opt, required, ConfigFile};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::Outcome;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Default, clap::Args)]
pub struct BootstrapArgs {
    /// Goals to generate dialogues for (JSONL).
    #[arg(long)]
    pub goals: Option<PathBuf>,
    /// Held-out goals the schema-agnostic model is scored on.
    #[arg(long)]
    pub eval_goals: Option<PathBuf>,
    /// In-domain goals for the degradation check.
    #[arg(long)]
    pub in_domain_eval_goals: Option<PathBuf>,
    #[arg(long)]
    pub api_table: Option<PathBuf>,
    #[arg(long)]
    pub api_url: Option<String>,
    /// In-domain human episodes (JSONL) used for multitask training.
    #[arg(long)]
    pub in_domain: Option<PathBuf>,
    /// Gold episodes for teacher-forced JGA, BLEU-4 and TEM.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// scripted | model (the model plays both roles)
    #[arg(long)]
    pub user_agent: Option<String>,
    /// exemplar | cmd:<command line>
    #[arg(long)]
    pub trainer: Option<String>,
    /// Agent server that loads checkpoints of an external trainer.
    #[arg(long)]
    pub agent_url: Option<String>,
    #[arg(long)]
    pub trainer_timeout_secs: Option<u64>,
    /// Starting checkpoints; trained on --in-domain when absent.
    #[arg(long)]
    pub base_aware: Option<PathBuf>,
    #[arg(long)]
    pub base_agnostic: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub eval_rollouts: Option<usize>,
    #[arg(long)]
    pub decode: Option<String>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub valid_share: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub multitask: Option<bool>,
    /// none | active | random
    #[arg(long)]
    pub al_policy: Option<String>,
    #[arg(long)]
    pub pool_train: Option<PathBuf>,
    #[arg(long)]
    pub pool_valid: Option<PathBuf>,
    #[arg(long)]
    pub k_schemas: Option<usize>,
    #[arg(long)]
    pub k_convs: Option<usize>,
    #[arg(long)]
    pub phrasebook: Option<PathBuf>,
    #[arg(long)]
    pub domain_map: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub goals: Option<PathBuf>,
    pub eval_goals: Option<PathBuf>,
    pub in_domain_eval_goals: Option<PathBuf>,
    pub api_table: Option<PathBuf>,
    pub api_url: Option<String>,
    pub in_domain: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub user_agent: String,
    pub trainer: String,
    pub agent_url: Option<String>,
    pub trainer_timeout_secs: u64,
    pub base_aware: Option<PathBuf>,
    pub base_agnostic: Option<PathBuf>,
    pub iterations: usize,
    pub rollouts: usize,
    pub eval_rollouts: usize,
    pub decode: String,
    pub p: f64,
    pub seed: u64,
    pub max_rounds: usize,
    pub valid_share: f64,
    pub multitask: bool,
    pub al_policy: String,
    pub pool_train: Option<PathBuf>,
    pub pool_valid: Option<PathBuf>,
    pub k_schemas: usize,
    pub k_convs: usize,
    pub phrasebook: Option<PathBuf>,
    pub domain_map: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        Self {
            goals: None,
            eval_goals: None,
            in_domain_eval_goals: None,
            api_table: None,
            api_url: None,
            in_domain: None,
            gold: None,
            user_agent: "scripted".into(),
            trainer: "exemplar".into(),
            agent_url: None,
            trainer_timeout_secs: todsim_core::bootstrap::DEFAULT_TRAINER_TIMEOUT.as_secs(),
            base_aware: None,
            base_agnostic: None,
            iterations: b.iterations,
            rollouts: b.sim.rollouts_per_goal,
            eval_rollouts: b.eval_rollouts,
            decode: "nucleus".into(),
            p: b.sim.decode.p,
            seed: b.seed,
            max_rounds: b.sim.max_rounds,
            valid_share: b.valid_share,
            multitask: b.multitask,
            al_policy: "none".into(),
            pool_train: None,
            pool_valid: None,
            k_schemas: b.k_schemas,
            k_convs: b.k_convs,
            phrasebook: None,
            domain_map: None,
            out: None,
        }
    }
}

pub fn resolve(file: &ConfigFile, args: &BootstrapArgs) -> Result<BootstrapSettings, CliError> {
    let mut s: BootstrapSettings = file.section("bootstrap")?;
    overlay!(s, args; user_agent, trainer, trainer_timeout_secs, iterations, rollouts, eval_rollouts, decode, p,
        seed, max_rounds, valid_share, multitask, al_policy, k_schemas, k_convs);
    overlay_opt!(s, args; goals, eval_goals, in_domain_eval_goals, api_table, api_url, in_domain, gold,
        agent_url, base_aware, base_agnostic, pool_train, pool_valid, phrasebook, domain_map, out);
    for p in [
        &mut s.goals,
        &mut s.eval_goals,
        &mut s.in_domain_eval_goals,
        &mut s.api_table,
        &mut s.in_domain,
        &mut s.gold,
        &mut s.base_aware,
        &mut s.base_agnostic,
        &mut s.pool_train,
        &mut s.pool_valid,
        &mut s.phrasebook,
        &mut s.domain_map,
        &mut s.out,
    ] {
        *p = abs(p);
    }
    Ok(s)
}

fn load_goals_opt(path: Option<&Path>) -> Result<Vec<ApiCall>, CliError> {
    match path {
        Some(p) => {
            agents::check_input(p)?;
            Ok(data_io::load_goals(p)?)
        }
        None => Ok(Vec::new()),
    }
}

fn load_episodes_opt(path: Option<&Path>) -> Result<Vec<Episode>, CliError> {
    match path {
        Some(p) => {
            agents::check_input(p)?;
            Ok(data_io::load_episodes(p)?)
        }
        None => Ok(Vec::new()),
    }
}

fn trainer(s: &BootstrapSettings) -> Result<Box<dyn Trainer>, CliError> {
    if s.trainer == "exemplar" {
        return Ok(Box::new(ExemplarTrainer));
    }
    match s.trainer.strip_prefix("cmd:") {
        Some(cmd) if !cmd.trim().is_empty() => {
            let url = required(&s.agent_url, "agent-url")?;
            Ok(Box::new(
                ExternalCommandTrainer::new(cmd, url).with_timeout(Duration::from_secs(s.trainer_timeout_secs)),
            ))
        }
        _ => Err(CliError::Usage(format!(
            "bad --trainer {:?}: expected exemplar or cmd:<command>",
            s.trainer
        ))),
    }
}

/// Baseline and per-iteration reports of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub iterations: Vec<IterationReport>,
    pub n_ledger_train: usize,
}

pub fn run(s: BootstrapSettings, jobs: usize) -> Result<Outcome, CliError> {
    let goals_path = required(&s.goals, "goals")?;
    let out = required(&s.out, "out")?.clone();
    let decode = agents::decode(&s.decode, s.p, s.seed)?;
    let cfg = BootstrapConfig {
        iterations: s.iterations,
        sim: SimConfig {
            max_rounds: s.max_rounds,
            rollouts_per_goal: s.rollouts,
            decode,
            schema_aware: true,
            exclude_errors: false,
        },
        eval_rollouts: s.eval_rollouts,
        valid_share: s.valid_share,
        multitask: s.multitask,
        seed: s.seed,
        k_schemas: s.k_schemas,
        k_convs: s.k_convs,
    };
    cfg.sim.validate()?;
    if !(0.0..1.0).contains(&s.valid_share) {
        return Err(CliError::Usage(format!("--valid-share must lie in [0, 1), got {}", s.valid_share)));
    }
    let mut manifest = RunManifest::start("bootstrap", &s).seed("bootstrap", s.seed);

    agents::check_input(goals_path)?;
    let goals = data_io::load_goals(goals_path)?;
    let eval_goals = load_goals_opt(s.eval_goals.as_deref())?;
    let in_domain_eval_goals = load_goals_opt(s.in_domain_eval_goals.as_deref())?;
    let in_domain = load_episodes_opt(s.in_domain.as_deref())?;
    let gold = load_episodes_opt(s.gold.as_deref())?;
    let pool_train = load_episodes_opt(s.pool_train.as_deref())?;
    let pool_valid = load_episodes_opt(s.pool_valid.as_deref())?;
    let api = agents::api_backend(s.api_table.as_deref(), s.api_url.as_deref())?;
    let book = agents::phrasebook(s.phrasebook.as_deref())?;
    let domains = agents::domain_map(s.domain_map.as_deref())?;
    let user: Option<std::sync::Arc<dyn Agent>> = match s.user_agent.as_str() {
        "model" => None,
        spec => Some(AgentSpec::parse(spec)?.build(Role::User, &book)?),
    };
    let injection = match s.al_policy.as_str() {
        "none" => None,
        "active" => Some(Injection::Active {
            pool_train: &pool_train,
            pool_valid: &pool_valid,
        }),
        "random" => Some(Injection::Random {
            pool_train: &pool_train,
            pool_valid: &pool_valid,
        }),
        other => return Err(CliError::Usage(format!("bad --al-policy {other:?}: expected none, active or random"))),
    };
    if injection.is_some() && s.pool_train.is_none() {
        return Err(CliError::Usage("--al-policy needs --pool-train".into()));
    }
    let base = match (&s.base_aware, &s.base_agnostic) {
        (Some(a), Some(g)) => {
            agents::check_input(a)?;
            agents::check_input(g)?;
            Some(ModelRefs {
                schema_aware: a.clone(),
                schema_agnostic: g.clone(),
            })
        }
        (None, None) => None,
        _ => return Err(CliError::Usage("give both --base-aware and --base-agnostic, or neither".into())),
    };
    if base.is_none() && in_domain.is_empty() {
        return Err(CliError::Usage("without base checkpoints --in-domain is required".into()));
    }
    for (name, p) in [
        ("goals", s.goals.as_deref()),
        ("eval_goals", s.eval_goals.as_deref()),
        ("in_domain_eval_goals", s.in_domain_eval_goals.as_deref()),
        ("api_table", s.api_table.as_deref()),
        ("in_domain", s.in_domain.as_deref()),
        ("gold", s.gold.as_deref()),
        ("base_aware", s.base_aware.as_deref()),
        ("base_agnostic", s.base_agnostic.as_deref()),
        ("pool_train", s.pool_train.as_deref()),
        ("pool_valid", s.pool_valid.as_deref()),
        ("phrasebook", s.phrasebook.as_deref()),
        ("domain_map", s.domain_map.as_deref()),
    ] {
        manifest.input(name, p);
    }

    let trainer = trainer(&s)?;
    let b = Bootstrap {
        cfg,
        inputs: BootstrapInputs {
            goals: &goals,
            api: &*api,
            domains: &domains,
            user: user.as_deref(),
            in_domain: &in_domain,
            eval_goals: &eval_goals,
            in_domain_eval_goals: &in_domain_eval_goals,
            offline_gold: &gold,
            injection,
        },
        trainer: &*trainer,
        root: out.clone(),
    };
    let state = agents::with_jobs(jobs, || b.run(base))??;

    let mut iterations = vec![state.baseline.clone()];
    iterations.extend(state.history.iter().cloned());
    let summary = BootstrapSummary {
        iterations,
        n_ledger_train: state.ledger.n_train(),
    };
    let report_path = out.join(REPORT_FILE);
    write_json(&report_path, &summary)?;
    for k in 0..=state.iteration {
        manifest.output(&format!("iter_{k}"), &iter_dir(&out, k));
    }
    manifest.output("report", &report_path);
    manifest.finish(&out)?;
    Ok(Outcome::new(report_table(&summary.iterations), &summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iteration: usize,
    pub ood_tsr: Option<f64>,
    pub ood_schema_aware_tsr: Option<f64>,
    pub in_domain_tsr: Option<f64>,
    pub jga: Option<f64>,
    pub bleu4: Option<f64>,
    pub tem: Option<f64>,
    pub selection_tem: Option<f64>,
    pub n_synthetic_train: usize,
    pub n_injected_train: usize,
    /// Relative to iteration 0.
    pub tsr_error_reduction: Option<f64>,
    pub jga_error_reduction: Option<f64>,
}

pub fn report_rows(reports: &[IterationReport]) -> Vec<ReportRow> {
    let base = reports.first();
    let reduction = |b: Option<f64>, v: Option<f64>| match (b, v) {
        (Some(b), Some(v)) => error_reduction(b, v).ok(),
        _ => None,
    };
    reports
        .iter()
        .map(|r| {
            let jga = r.ood.as_ref().and_then(|o| o.jga);
            ReportRow {
                iteration: r.iteration,
                ood_tsr: r.ood_tsr(),
                ood_schema_aware_tsr: r.ood_schema_aware_tsr,
                in_domain_tsr: r.in_domain_tsr,
                jga,
                bleu4: r.ood.as_ref().and_then(|o| o.bleu4),
                tem: r.ood.as_ref().and_then(|o| o.tem),
                selection_tem: r.selection_tem,
                n_synthetic_train: r.n_synthetic_train,
                n_injected_train: r.n_injected_train,
                tsr_error_reduction: reduction(base.and_then(IterationReport::ood_tsr), r.ood_tsr()),
                jga_error_reduction: reduction(base.and_then(|b| b.ood.as_ref().and_then(|o| o.jga)), jga),
            }
        })
        .collect()
}

pub fn report_table(reports: &[IterationReport]) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    let mut out = String::from(
        "iter  ood_tsr  aware_tsr  in_dom_tsr  jga    bleu4  tem    sel_tem  syn_train  inj_train  err_red_tsr  err_red_jga\n",
    );
    for r in report_rows(reports) {
        out.push_str(&format!(
            "{:<5} {:<8} {:<10} {:<11} {:<6} {:<6} {:<6} {:<8} {:<10} {:<10} {:<12} {}\n",
            r.iteration,
            f(r.ood_tsr),
            f(r.ood_schema_aware_tsr),
            f(r.in_domain_tsr),
            f(r.jga),
            f(r.bleu4),
            f(r.tem),
            f(r.selection_tem),
            r.n_synthetic_train,
            r.n_injected_train,
            f(r.tsr_error_reduction),
            f(r.jga_error_reduction),
        ));
    }
    out
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct ReportArgs {
    /// Bootstrap output directory.
    #[arg(long, conflicts_with_all = ["base", "new"])]
    pub root: Option<PathBuf>,
    /// Error reduction of two decimal scores, in exact arithmetic.
    #[arg(long, requires = "new")]
    pub base: Option<String>,
    #[arg(long, requires = "base")]
    pub new: Option<String>,
}

#[derive(Debug, Serialize)]
struct ReductionReport {
    base: String,
    new: String,
    error_reduction: String,
    error_reduction_decimal: f64,
}

pub fn run_report(args: &ReportArgs) -> Result<Outcome, CliError> {
    if let (Some(base), Some(new)) = (&args.base, &args.new) {
        let r = error_reduction_exact(decimal_ratio(base)?, decimal_ratio(new)?)?;
        let dec = *r.numer() as f64 / *r.denom() as f64;
        let rep = ReductionReport {
            base: base.clone(),
            new: new.clone(),
            error_reduction: r.to_string(),
            error_reduction_decimal: dec,
        };
        return Ok(Outcome::new(format!("error_reduction {r} = {dec:.4}\n"), &rep));
    }
    let root = required(&args.root, "root")?;
    let mut reports = Vec::new();
    for k in 0.. {
        let path = iter_dir(root, k).join(METRICS_FILE);
        if !path.is_file() {
            break;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let r: IterationReport =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(CliError::io(iter_dir(root, 0).join(METRICS_FILE), "no such file"));
    }
    Ok(Outcome::new(report_table(&reports), &report_rows(&reports)))
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct AlArgs {
    /// Generation batch (JSONL episodes) to rank schemas on.
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub pool_train: PathBuf,
    #[arg(long)]
    pub pool_valid: Option<PathBuf>,
    /// Ledger to extend; created when missing. Defaults to
    /// `<out>/al_ledger.json`.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// active | random
    #[arg(long, default_value = "active")]
    pub policy: String,
    #[arg(long, default_value_t = todsim_core::active_learning::K_SCHEMAS)]
    pub k_schemas: usize,
    #[arg(long, default_value_t = todsim_core::active_learning::K_CONVS)]
    pub k_convs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for train_adds.jsonl, valid_adds.jsonl and ranking.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_al(args: &AlArgs) -> Result<Outcome, CliError> {
    agents::check_input(&args.episodes)?;
    let episodes = data_io::load_episodes(&args.episodes)?;
    let pool_train = load_episodes_opt(Some(&args.pool_train))?;
    let pool_valid = load_episodes_opt(args.pool_valid.as_deref())?;
    let ledger_path = args.ledger.clone().unwrap_or_else(|| args.out.join(LEDGER_FILE));
    let mut ledger = if ledger_path.is_file() {
        AlLedger::load(&ledger_path)?
    } else {
        AlLedger::default()
    };
    let iteration = ledger.entries.iter().map(|e| e.iteration).max().map_or(1, |k| k + 1);
    let table = rank_schemas(&episodes)?;
    let taken = ledger.taken();
    let batch = match args.policy.as_str() {
        "active" => select_al_batch(&table, &pool_train, &pool_valid, &taken, args.k_schemas, args.k_convs, args.seed),
        "random" => {
            let free = |pool: &[Episode]| -> Vec<Episode> {
                pool.iter().filter(|e| !taken.contains(&e.id())).cloned().collect()
            };
            AlBatch {
                schemas: Vec::new(),
                train_adds: select_random_fewshot(&free(&pool_train), args.k_convs, args.seed),
                valid_adds: select_random_fewshot(&free(&pool_valid), args.k_convs, args.seed ^ 1),
                warnings: Vec::new(),
            }
        }
        other => return Err(CliError::Usage(format!("bad --policy {other:?}: expected active or random"))),
    };
    ledger.record(iteration, args.seed, &args.policy, &batch);
    data_io::write_episodes(&args.out.join("train_adds.jsonl"), &batch.train_adds)?;
    data_io::write_episodes(&args.out.join("valid_adds.jsonl"), &batch.valid_adds)?;
    write_json(&args.out.join("ranking.json"), &table)?;
    ledger.save(&ledger_path)?;

    let mut manifest = RunManifest::start("al", &serde_json::json!({
        "episodes": args.episodes, "pool_train": args.pool_train, "pool_valid": args.pool_valid,
        "ledger": ledger_path, "policy": args.policy, "k_schemas": args.k_schemas, "k_convs": args.k_convs,
        "seed": args.seed, "out": args.out,
    }))
    .seed("al", args.seed);
    manifest.input("episodes", Some(&args.episodes));
    manifest.input("pool_train", Some(&args.pool_train));
    manifest.input("pool_valid", args.pool_valid.as_deref());
    manifest.output("ledger", &ledger_path);
    manifest.output("train_adds", &args.out.join("train_adds.jsonl"));
    manifest.output("valid_adds", &args.out.join("valid_adds.jsonl"));
    manifest.finish(&args.out)?;

    let schemas: BTreeSet<&str> = batch.schemas.iter().map(String::as_str).collect();
    let mut text = String::from("intent                    tsr    goals  selected\n");
    for row in &table.rows {
        text.push_str(&format!(
            "{:<25} {:.3}  {:<6} {}\n",
            row.intent,
            row.tsr,
            row.n_goals,
            if schemas.contains(row.intent.as_str()) { "*" } else { "" }
        ));
    }
    text.push_str(&format!(
        "iteration {iteration}: {} train, {} valid added; {} train in ledger\n",
        batch.train_adds.len(),
        batch.valid_adds.len(),
        ledger.n_train()
    ));
    for w in &batch.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    Ok(Outcome::new(text, ledger.entries.last().expect("just recorded")))
}
