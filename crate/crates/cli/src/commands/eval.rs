use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use serde::Serialize;
use todsim_acute::store::write_tasks;
use todsim_acute::{build_tasks, router, ControlSpec, EvalStore, ServiceConfig, SessionPolicy};
use todsim_core::{data_io, seed, ApiCall, Episode};

use crate::agents;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::Outcome;

#[derive(Debug, Clone, Default, clap::Args)]
pub struct EvalTasksArgs {
    /// `name=episodes.jsonl`, once per system.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    /// Goals to compare on; defaults to the goals every system has.
    #[arg(long)]
    pub goals: Option<PathBuf>,
    /// Seeded random subset of the goals.
    #[arg(long)]
    pub n_goals: Option<usize>,
    /// Gold episodes for control pairs.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Number of control tasks.
    #[arg(long, default_value_t = 1)]
    pub controls: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the tasks file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct TasksSummary {
    systems: Vec<String>,
    n_goals: usize,
    n_comparisons: usize,
    n_controls: usize,
    tasks_file: PathBuf,
}

pub fn run_tasks(args: &EvalTasksArgs) -> Result<Outcome, CliError> {
    let mut runs: BTreeMap<String, Vec<Episode>> = BTreeMap::new();
    let mut manifest = RunManifest::start(
        "eval-tasks",
        &serde_json::json!({
            "runs": args.runs, "goals": args.goals, "n_goals": args.n_goals, "gold": args.gold,
            "controls": args.controls, "seed": args.seed, "out": args.out,
        }),
    )
    .seed("tasks", args.seed);
    for spec in &args.runs {
        let (name, path) = spec
            .split_once('=')
            .filter(|(n, p)| !n.is_empty() && !p.is_empty())
            .ok_or_else(|| CliError::Usage(format!("bad --run {spec:?}: expected name=path")))?;
        let path = PathBuf::from(path);
        agents::check_input(&path)?;
        manifest.input(&format!("run:{name}"), Some(&path));
        runs.insert(name.to_string(), data_io::load_episodes(&path)?);
    }
    let mut goals: Vec<ApiCall> = match &args.goals {
        Some(p) => {
            agents::check_input(p)?;
            manifest.input("goals", Some(p));
            data_io::load_goals(p)?
        }
        None => {
            let mut common: Option<BTreeSet<String>> = None;
            let mut first: BTreeMap<String, ApiCall> = BTreeMap::new();
            for eps in runs.values() {
                let keys: BTreeSet<String> = eps
                    .iter()
                    .map(|e| {
                        let g = e.goal.canonical();
                        let k = g.to_string();
                        first.entry(k.clone()).or_insert(g);
                        k
                    })
                    .collect();
                common = Some(match common {
                    None => keys,
                    Some(c) => c.intersection(&keys).cloned().collect(),
                });
            }
            common.unwrap_or_default().into_iter().map(|k| first[&k].clone()).collect()
        }
    };
    if let Some(n) = args.n_goals {
        goals.shuffle(&mut seed::rng(&[args.seed, 0x60a1]));
        goals.truncate(n);
    }
    let gold = match &args.gold {
        Some(p) => {
            agents::check_input(p)?;
            manifest.input("gold", Some(p));
            data_io::load_episodes(p)?
        }
        None if args.controls > 0 => {
            return Err(CliError::Usage("--controls needs --gold (or pass --controls 0)".into()));
        }
        None => Vec::new(),
    };
    let tasks = build_tasks(
        &runs,
        &goals,
        &ControlSpec {
            gold,
            n_controls: args.controls,
        },
        args.seed,
    )?;
    let path = write_tasks(&args.out, &tasks)?;
    manifest.output("tasks", &path);
    manifest.finish(&args.out)?;
    let n_controls = tasks.iter().filter(|t| t.is_control).count();
    let summary = TasksSummary {
        systems: runs.keys().cloned().collect(),
        n_goals: goals.len(),
        n_comparisons: tasks.len() - n_controls,
        n_controls,
        tasks_file: path,
    };
    let text = format!(
        "{} comparison tasks over {} goals and {} systems, {} controls -> {}\n",
        summary.n_comparisons,
        summary.n_goals,
        summary.systems.len(),
        n_controls,
        summary.tasks_file.display()
    );
    Ok(Outcome::new(text, &summary))
}

#[derive(Debug, Clone, clap::Args)]
pub struct EvalServeArgs {
    /// Directory holding the tasks file; the annotation log is kept there too.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Built UI bundle served under `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub controls_per_annotator: usize,
    #[arg(long, default_value_t = 5)]
    pub control_every: usize,
    #[arg(long, default_value_t = 15)]
    pub lease_minutes: u64,
    #[arg(long, default_value_t = 0)]
    pub max_control_failures: usize,
}

pub fn run_serve(args: &EvalServeArgs) -> Result<Outcome, CliError> {
    let policy = SessionPolicy {
        controls_per_annotator: args.controls_per_annotator,
        control_every: args.control_every,
        lease: Duration::from_secs(args.lease_minutes * 60),
        max_control_failures: args.max_control_failures,
    };
    let store = Arc::new(EvalStore::open(&args.dir, policy)?);
    let config = ServiceConfig::from_env(args.ui_dir.clone());
    if config.admin_token.is_none() {
        log::warn!("{} is not set; /api/results is disabled", todsim_acute::service::ADMIN_TOKEN_ENV);
    }
    let app = router(store, config);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .map_err(|e| CliError::Usage(format!("bind {}: {e}", args.addr)))?;
        eprintln!("eval service listening on http://{}", args.addr);
        todsim_http::serve(listener, app)
            .await
            .map_err(|e| CliError::Usage(format!("serve: {e}")))
    })?;
    Ok(Outcome::default())
}
