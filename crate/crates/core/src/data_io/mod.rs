//! Episode files, the in-domain / out-of-domain split, goal extraction and
//! the SGD-style importer.

mod sgd;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dialogue::{serialize_call, ApiCall, ApiSchema, Episode, Fold};

pub use sgd::{import_sgd_like, SgdImport};

/// Domains held out of training by default.
pub const DEFAULT_HOLDOUT: [&str; 4] = ["Home Search", "Messaging", "Payment", "Rental Cars"];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads canonical JSONL. Blank lines are skipped; errors carry 1-based
/// line numbers.
pub fn load_episodes(path: &Path) -> Result<Vec<Episode>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let ep: Episode = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(ep);
    }
    Ok(out)
}

/// Writes canonical JSONL, one episode per `\n`-terminated line.
pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<(), DataError> {
    write_jsonl(path, episodes)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a JSONL file of serialized goals, one JSON string per line.
pub fn load_goals(path: &Path) -> Result<Vec<ApiCall>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut goals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let goal: ApiCall = serde_json::from_str(line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        goals.push(goal);
    }
    Ok(goals)
}

pub fn write_goals(path: &Path, goals: &[ApiCall]) -> Result<(), DataError> {
    write_jsonl(path, goals)
}

/// Domain components of a possibly comma-joined label.
pub fn domain_parts(label: &str) -> impl Iterator<Item = &str> {
    label.split(',').map(str::trim).filter(|s| !s.is_empty())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainSplit {
    pub holdout: BTreeSet<String>,
    pub in_domain: BTreeMap<Fold, Vec<Episode>>,
    pub out_of_domain: BTreeMap<Fold, Vec<Episode>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub in_domain: BTreeMap<Fold, usize>,
    pub out_of_domain: BTreeMap<Fold, usize>,
}

impl DomainSplit {
    pub fn counts(&self) -> SplitCounts {
        let count = |m: &BTreeMap<Fold, Vec<Episode>>| m.iter().map(|(f, v)| (*f, v.len())).collect();
        SplitCounts {
            in_domain: count(&self.in_domain),
            out_of_domain: count(&self.out_of_domain),
        }
    }

    pub fn in_fold(&self, fold: Fold) -> &[Episode] {
        self.in_domain.get(&fold).map_or(&[], Vec::as_slice)
    }

    pub fn out_fold(&self, fold: Fold) -> &[Episode] {
        self.out_of_domain.get(&fold).map_or(&[], Vec::as_slice)
    }
}

pub fn default_holdout() -> BTreeSet<String> {
    DEFAULT_HOLDOUT.iter().map(|s| s.to_string()).collect()
}

/// An episode is out-of-domain when any of its domains is held out.
pub fn split_by_domain(episodes: &[Episode], holdout: &BTreeSet<String>) -> DomainSplit {
    let mut split = DomainSplit {
        holdout: holdout.clone(),
        ..DomainSplit::default()
    };
    for ep in episodes {
        let ood = domain_parts(&ep.domain).any(|d| holdout.contains(d));
        let side = if ood { &mut split.out_of_domain } else { &mut split.in_domain };
        side.entry(ep.fold).or_default().push(ep.clone());
    }
    split
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoalExtraction {
    pub goals: Vec<ApiCall>,
    pub skipped_multi_goal: usize,
    pub skipped_no_call: usize,
    pub skipped_no_schema: usize,
}

/// One goal per single-goal episode: its only distinct call. When `schemas`
/// is given, goals whose intent has no schema are skipped too.
pub fn extract_goals(episodes: &[Episode], schemas: Option<&[ApiSchema]>) -> GoalExtraction {
    let mut out = GoalExtraction::default();
    for ep in episodes {
        let mut distinct: BTreeMap<String, ApiCall> = BTreeMap::new();
        for call in ep.calls() {
            distinct.entry(serialize_call(&call.canonical())).or_insert(call);
        }
        match distinct.len() {
            0 => out.skipped_no_call += 1,
            1 => {
                let goal = distinct.into_values().next().expect("one entry").canonical();
                if schemas.is_some_and(|s| !s.iter().any(|s| s.intent() == goal.intent())) {
                    out.skipped_no_schema += 1;
                } else {
                    out.goals.push(goal);
                }
            }
            _ => out.skipped_multi_goal += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Origin, Speaker, Turn};

    fn ep(domain: &str, fold: Fold) -> Episode {
        Episode {
            goal: ApiCall::new("X", [("a", "1")]).unwrap(),
            schema: None,
            turns: vec![Turn::new(Speaker::User, "hi")],
            success: false,
            domain: domain.into(),
            fold,
            origin: Origin::Human,
        }
    }

    #[test]
    fn mixed_domains_go_out_of_domain() {
        let eps = vec![
            ep("Payment", Fold::Train),
            ep("Restaurants, Payment", Fold::Valid),
            ep("Restaurants", Fold::Train),
        ];
        let split = split_by_domain(&eps, &default_holdout());
        assert_eq!(split.out_fold(Fold::Train).len(), 1);
        assert_eq!(split.out_fold(Fold::Valid).len(), 1);
        assert_eq!(split.in_fold(Fold::Train).len(), 1);
    }

    #[test]
    fn goals_from_calls() {
        let mut one = ep("A", Fold::Train);
        one.turns.push(Turn::new(Speaker::AssistantCall, "APICALL: api_name = X ; a = 1"));
        one.turns.push(Turn::new(Speaker::ApiResp, "APIRESP: API_FAIL"));
        one.turns.push(Turn::new(Speaker::AssistantUtt, "ok"));
        let mut two = one.clone();
        two.turns.push(Turn::new(Speaker::User, "more"));
        two.turns.push(Turn::new(Speaker::AssistantCall, "APICALL: api_name = Y"));
        two.turns.push(Turn::new(Speaker::ApiResp, "APIRESP: API_FAIL"));
        two.turns.push(Turn::new(Speaker::AssistantUtt, "ok"));
        let out = extract_goals(&[one, two, ep("A", Fold::Train)], None);
        assert_eq!(out.goals.len(), 1);
        assert_eq!(out.skipped_multi_goal, 1);
        assert_eq!(out.skipped_no_call, 1);
    }
}
