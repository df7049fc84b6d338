use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use todsim_core::data_io::{self, default_holdout, extract_goals, import_sgd_like, split_by_domain};
use todsim_core::fixture::{Corpus, World};
use todsim_core::mock_api::ApiTable;
use todsim_core::{Episode, Fold};

use super::write_json;
use crate::agents;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::Outcome;

fn fold_name(f: Fold) -> &'static str {
    match f {
        Fold::Train => "train",
        Fold::Valid => "valid",
        Fold::Test => "test",
    }
}

fn parse_fold(s: &str) -> Result<Fold, CliError> {
    match s {
        "train" => Ok(Fold::Train),
        "valid" => Ok(Fold::Valid),
        "test" => Ok(Fold::Test),
        other => Err(CliError::Usage(format!("bad fold {other:?}: expected train, valid or test"))),
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct FixtureArgs {
    /// Comma-separated worlds: in-domain, holdout, al-pool.
    #[arg(long, default_value = "in-domain,holdout")]
    pub world: String,
    /// Goals per intent in the train fold.
    #[arg(long, default_value_t = 10)]
    pub train: usize,
    #[arg(long, default_value_t = 2)]
    pub valid: usize,
    #[arg(long, default_value_t = 3)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct FixtureSummary {
    domains: Vec<String>,
    episodes: BTreeMap<&'static str, usize>,
    api_table_entries: usize,
    out: PathBuf,
}

pub fn run_fixture(args: &FixtureArgs) -> Result<Outcome, CliError> {
    let mut worlds = Vec::new();
    for name in args.world.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        worlds.push(match name {
            "in-domain" => World::in_domain(),
            "holdout" => World::holdout(),
            "al-pool" => World::active_learning_pool(),
            other => return Err(CliError::Usage(format!("unknown world {other:?}"))),
        });
    }
    if worlds.is_empty() {
        return Err(CliError::Usage("--world names no world".into()));
    }
    let world = World::merged(&worlds.iter().collect::<Vec<_>>());
    let corpus = Corpus::build(&world, (args.train, args.valid, args.test), args.seed);
    let mut manifest = RunManifest::start(
        "fixture",
        &serde_json::json!({
            "world": args.world, "train": args.train, "valid": args.valid, "test": args.test,
            "seed": args.seed, "out": args.out,
        }),
    )
    .seed("fixture", args.seed);
    let mut counts = BTreeMap::new();
    for fold in [Fold::Train, Fold::Valid, Fold::Test] {
        let name = fold_name(fold);
        let eps: Vec<Episode> = corpus.episodes.iter().filter(|e| e.fold == fold).cloned().collect();
        let path = args.out.join(format!("{name}.jsonl"));
        data_io::write_episodes(&path, &eps)?;
        manifest.output(name, &path);
        let goals_path = args.out.join(format!("goals_{name}.jsonl"));
        data_io::write_goals(&goals_path, corpus.goals.get(&fold).map_or(&[], Vec::as_slice))?;
        manifest.output(&format!("goals_{name}"), &goals_path);
        counts.insert(name, eps.len());
    }
    let table_path = args.out.join("api_table.jsonl");
    corpus.table.write_jsonl(&table_path)?;
    let book_path = args.out.join("phrasebook.json");
    write_json(&book_path, &world.phrasebook())?;
    let domains_path = args.out.join("domains.json");
    write_json(&domains_path, &world.domain_map())?;
    manifest.output("api_table", &table_path);
    manifest.output("phrasebook", &book_path);
    manifest.output("domain_map", &domains_path);
    manifest.finish(&args.out)?;
    let summary = FixtureSummary {
        domains: world.domain_names().into_iter().collect(),
        episodes: counts,
        api_table_entries: corpus.table.len(),
        out: args.out.clone(),
    };
    let text = format!(
        "{} domains; train {} / valid {} / test {} episodes; {} table entries -> {}\n",
        summary.domains.len(),
        summary.episodes["train"],
        summary.episodes["valid"],
        summary.episodes["test"],
        summary.api_table_entries,
        args.out.display()
    );
    Ok(Outcome::new(text, &summary))
}

#[derive(Debug, Clone, clap::Args)]
pub struct BuildTableArgs {
    /// Episode files whose call/response pairs fill the table.
    #[arg(long, num_args = 1.., required = true)]
    pub episodes: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_build_table(args: &BuildTableArgs) -> Result<Outcome, CliError> {
    let mut table = ApiTable::new();
    for p in &args.episodes {
        agents::check_input(p)?;
        table.merge(&ApiTable::from_episodes(&data_io::load_episodes(p)?)?);
    }
    table.write_jsonl(&args.out)?;
    let n = table.len();
    Ok(Outcome::new(
        format!("{n} entries -> {}\n", args.out.display()),
        &serde_json::json!({ "entries": n, "out": args.out }),
    ))
}

#[derive(Debug, Clone, clap::Args)]
pub struct ImportSgdArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub dialogues: Vec<PathBuf>,
    #[arg(long, default_value = "train")]
    pub fold: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_import_sgd(args: &ImportSgdArgs) -> Result<Outcome, CliError> {
    let fold = parse_fold(&args.fold)?;
    agents::check_input(&args.schema)?;
    for d in &args.dialogues {
        agents::check_input(d)?;
    }
    let imported = import_sgd_like(&args.schema, &args.dialogues, fold)?;
    data_io::write_episodes(&args.out, &imported.episodes)?;
    let json = serde_json::json!({
        "episodes": imported.episodes.len(),
        "skipped_without_calls": imported.skipped_without_calls,
        "out": args.out,
    });
    Ok(Outcome::new(
        format!(
            "{} episodes ({} dialogues without calls skipped) -> {}\n",
            imported.episodes.len(),
            imported.skipped_without_calls,
            args.out.display()
        ),
        &json,
    ))
}

#[derive(Debug, Clone, clap::Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub episodes: PathBuf,
    /// Comma-separated held-out domains.
    #[arg(long)]
    pub holdout: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_split(args: &SplitArgs) -> Result<Outcome, CliError> {
    agents::check_input(&args.episodes)?;
    let episodes = data_io::load_episodes(&args.episodes)?;
    let holdout = match &args.holdout {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => default_holdout(),
    };
    let split = split_by_domain(&episodes, &holdout);
    for fold in [Fold::Train, Fold::Valid, Fold::Test] {
        let name = fold_name(fold);
        data_io::write_episodes(&args.out.join(format!("in_domain_{name}.jsonl")), split.in_fold(fold))?;
        data_io::write_episodes(&args.out.join(format!("ood_{name}.jsonl")), split.out_fold(fold))?;
    }
    let counts = split.counts();
    let mut text = String::new();
    for fold in [Fold::Train, Fold::Valid, Fold::Test] {
        text.push_str(&format!(
            "{:<6} in-domain {:<6} held-out {}\n",
            fold_name(fold),
            counts.in_domain.get(&fold).unwrap_or(&0),
            counts.out_of_domain.get(&fold).unwrap_or(&0)
        ));
    }
    Ok(Outcome::new(text, &counts))
}

#[derive(Debug, Clone, clap::Args)]
pub struct ExtractGoalsArgs {
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_extract_goals(args: &ExtractGoalsArgs) -> Result<Outcome, CliError> {
    agents::check_input(&args.episodes)?;
    let episodes = data_io::load_episodes(&args.episodes)?;
    let ex = extract_goals(&episodes, None);
    data_io::write_goals(&args.out, &ex.goals)?;
    let json = serde_json::json!({
        "goals": ex.goals.len(),
        "skipped_multi_goal": ex.skipped_multi_goal,
        "skipped_no_call": ex.skipped_no_call,
        "out": args.out,
    });
    Ok(Outcome::new(
        format!(
            "{} goals ({} multi-goal, {} without calls skipped) -> {}\n",
            ex.goals.len(),
            ex.skipped_multi_goal,
            ex.skipped_no_call,
            args.out.display()
        ),
        &json,
    ))
}
