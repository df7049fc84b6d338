//! Importer for a simplified SGD-style layout.
//!
//! `schema.json`:
//!
//! ```json
//! [{"service": "Homes_1", "domain": "Home Search",
//!   "intents": [{"name": "FindHomeByArea", "slots": ["area", "number_of_beds"]}]}]
//! ```
//!
//! Dialogue files hold a list of dialogues:
//!
//! ```json
//! [{"dialogue_id": "1_00001", "services": ["Homes_1"],
//!   "turns": [
//!     {"speaker": "USER", "utterance": "Find me a home in Dublin ."},
//!     {"speaker": "SYSTEM", "utterance": "I found one .",
//!      "service_call": {"service": "Homes_1", "method": "FindHomeByArea",
//!                       "parameters": {"area": "Dublin", "number_of_beds": "2"}},
//!      "service_results": [{"address": "1 Main St"}]}]}]
//! ```
//!
//! A system turn with a service call becomes an `AssistantCall` / `ApiResp` /
//! `AssistantUtt` triple; empty results become the failure sentinel. The last
//! call of a dialogue is its goal, dialogues without calls are skipped, and
//! the domain label joins the domains of the dialogue's services with `, `.
//! Consecutive turns of the same speaker are merged; leading system turns are
//! dropped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::DataError;
use crate::dialogue::{ApiCall, ApiResponse, Episode, Fold, Origin, Speaker, Turn};

#[derive(Debug, Deserialize)]
struct ServiceSchema {
    service: String,
    domain: String,
    intents: Vec<IntentSchema>,
}

#[derive(Debug, Deserialize)]
struct IntentSchema {
    name: String,
    slots: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Dialogue {
    dialogue_id: String,
    services: Vec<String>,
    turns: Vec<SgdTurn>,
}

#[derive(Debug, Deserialize)]
struct SgdTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    service_call: Option<ServiceCall>,
    #[serde(default)]
    service_results: Vec<BTreeMap<String, String>>,
}

#[derive(Debug, Deserialize)]
struct ServiceCall {
    service: String,
    method: String,
    #[serde(default)]
    parameters: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdImport {
    pub episodes: Vec<Episode>,
    pub skipped_without_calls: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

fn push_merged(turns: &mut Vec<Turn>, speaker: Speaker, text: &str) {
    match turns.last_mut() {
        Some(last) if last.speaker == speaker => {
            last.text.push(' ');
            last.text.push_str(text.trim());
        }
        _ => turns.push(Turn::new(speaker, text.trim())),
    }
}

/// Imports dialogue files in path order, labelling every episode with `fold`.
pub fn import_sgd_like(schema_file: &Path, dialogue_files: &[PathBuf], fold: Fold) -> Result<SgdImport, DataError> {
    let services: Vec<ServiceSchema> = read_json(schema_file)?;
    let by_service: BTreeMap<&str, &ServiceSchema> = services.iter().map(|s| (s.service.as_str(), s)).collect();
    let mut files = dialogue_files.to_vec();
    files.sort();
    let mut out = SgdImport::default();
    for file in &files {
        let dialogues: Vec<Dialogue> = read_json(file)?;
        for d in dialogues {
            let mismatch = |what: String| DataError::SchemaMismatch(format!("dialogue {}: {what}", d.dialogue_id));
            let mut domains: Vec<&str> = Vec::new();
            for s in &d.services {
                let schema = by_service.get(s.as_str()).ok_or_else(|| mismatch(format!("unknown service {s:?}")))?;
                if !domains.contains(&schema.domain.as_str()) {
                    domains.push(&schema.domain);
                }
            }
            let mut turns: Vec<Turn> = Vec::new();
            let mut goal: Option<ApiCall> = None;
            for t in &d.turns {
                let is_user = t.speaker.eq_ignore_ascii_case("USER");
                if is_user {
                    push_merged(&mut turns, Speaker::User, &t.utterance);
                    continue;
                }
                if turns.is_empty() {
                    continue;
                }
                if let Some(sc) = &t.service_call {
                    let schema = by_service
                        .get(sc.service.as_str())
                        .ok_or_else(|| mismatch(format!("unknown service {:?}", sc.service)))?;
                    let intent = schema
                        .intents
                        .iter()
                        .find(|i| i.name == sc.method)
                        .ok_or_else(|| mismatch(format!("unknown intent {:?}", sc.method)))?;
                    if let Some(bad) = sc.parameters.keys().find(|k| !intent.slots.contains(k)) {
                        return Err(mismatch(format!("unknown slot {bad:?} for {}", sc.method)));
                    }
                    let call = ApiCall::new(sc.method.as_str(), sc.parameters.clone())
                        .map_err(|e| mismatch(e.to_string()))?
                        .canonical();
                    let response = match t.service_results.first() {
                        Some(row) => ApiResponse::Payload(row.clone()),
                        None => ApiResponse::Failure,
                    };
                    if turns.last().is_some_and(|l| l.speaker == Speaker::AssistantUtt) {
                        // A second call in the same round gets its own empty user turn.
                        turns.push(Turn::new(Speaker::User, ""));
                    }
                    turns.push(Turn::new(Speaker::AssistantCall, call.to_string()));
                    turns.push(Turn::new(Speaker::ApiResp, response.to_string()));
                    turns.push(Turn::new(Speaker::AssistantUtt, t.utterance.trim()));
                    goal = Some(call);
                } else {
                    push_merged(&mut turns, Speaker::AssistantUtt, &t.utterance);
                }
            }
            let Some(goal) = goal else {
                out.skipped_without_calls += 1;
                continue;
            };
            let mut ep = Episode {
                goal,
                schema: None,
                turns,
                success: false,
                domain: domains.join(", "),
                fold,
                origin: Origin::Human,
            };
            ep.success = ep.compute_success();
            out.episodes.push(ep);
        }
    }
    Ok(out)
}
