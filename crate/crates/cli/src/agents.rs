//! Agent, API and phrasing resolution shared by the subcommands.
//!
//! Agent specs:
//!
//! - `scripted`: the rule-based agent for the role, phrased by the phrasebook
//! - `exemplar:<store.json>`: a trained exemplar store
//! - `remote:<base-url>`: an agent server speaking `POST /act`

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use todsim_core::agents::{Agent, DecodeConfig, NoisyAgent, PhraseBook, RemoteAgent, Role, ScriptedAssistant, ScriptedUser};
use todsim_core::bootstrap::{ExemplarTrainer, Trainer};
use todsim_core::fixture::World;
use todsim_core::mock_api::{ApiBackend, ApiTable, RemoteApi};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentSpec {
    Scripted,
    Exemplar(PathBuf),
    Remote(String),
}

impl AgentSpec {
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        match spec.split_once(':') {
            _ if spec == "scripted" => Ok(AgentSpec::Scripted),
            Some(("exemplar", path)) if !path.is_empty() => Ok(AgentSpec::Exemplar(path.into())),
            Some(("remote", url)) if !url.is_empty() => Ok(AgentSpec::Remote(url.to_string())),
            _ => Err(CliError::Usage(format!(
                "bad agent spec {spec:?}: expected scripted, exemplar:<path> or remote:<url>"
            ))),
        }
    }

    pub fn input_path(&self) -> Option<&Path> {
        match self {
            AgentSpec::Exemplar(p) => Some(p),
            _ => None,
        }
    }

    pub fn build(&self, role: Role, book: &Arc<PhraseBook>) -> Result<Arc<dyn Agent>, CliError> {
        Ok(match self {
            AgentSpec::Scripted => match role {
                Role::User => Arc::new(ScriptedUser::new(book.clone())),
                Role::Assistant => Arc::new(ScriptedAssistant::new(book.clone())),
            },
            AgentSpec::Exemplar(path) => {
                if !path.is_file() {
                    return Err(CliError::io(path, "no such file"));
                }
                ExemplarTrainer.load(path)?
            }
            AgentSpec::Remote(url) => Arc::new(RemoteAgent::new(url)),
        })
    }
}

/// Wraps `agent` in slot-value noise when `epsilon > 0`.
pub fn with_noise(agent: Arc<dyn Agent>, epsilon: f64) -> Result<Arc<dyn Agent>, CliError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(CliError::Usage(format!("noise must lie in [0, 1], got {epsilon}")));
    }
    Ok(if epsilon > 0.0 { Arc::new(NoisyAgent::new(agent, epsilon)) } else { agent })
}

/// Every built-in fixture world.
pub fn builtin_world() -> World {
    World::merged(&[&World::in_domain(), &World::holdout(), &World::active_learning_pool()])
}

pub fn phrasebook(path: Option<&Path>) -> Result<Arc<PhraseBook>, CliError> {
    match path {
        None => Ok(Arc::new(builtin_world().phrasebook())),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let book: PhraseBook =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok(Arc::new(book))
        }
    }
}

/// Intent to domain label: the built-in worlds, overridden by `path` (a JSON
/// object).
pub fn domain_map(path: Option<&Path>) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = builtin_world().domain_map();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
        let extra: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        map.extend(extra);
    }
    Ok(map)
}

pub fn api_backend(table: Option<&Path>, url: Option<&str>) -> Result<Box<dyn ApiBackend>, CliError> {
    match (table, url) {
        (Some(path), None) => {
            if !path.is_file() {
                return Err(CliError::io(path, "no such file"));
            }
            Ok(Box::new(ApiTable::load_jsonl(path)?))
        }
        (None, Some(url)) => Ok(Box::new(RemoteApi::new(url, Duration::from_secs(30)))),
        (Some(_), Some(_)) => Err(CliError::Usage("give either --api-table or --api-url, not both".into())),
        (None, None) => Err(CliError::Usage("missing required setting --api-table (or --api-url)".into())),
    }
}

pub fn decode(mode: &str, p: f64, seed: u64) -> Result<DecodeConfig, CliError> {
    let d = match mode {
        "nucleus" => DecodeConfig::nucleus(p, seed),
        "greedy" => DecodeConfig::greedy(seed),
        other => return Err(CliError::Usage(format!("bad --decode {other:?}: expected nucleus or greedy"))),
    };
    d.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(d)
}

/// Runs `f` on a rayon pool of `jobs` threads (0 = rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    Ok(pool.install(f))
}

pub fn check_input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(path, "no such file"))
    }
}
