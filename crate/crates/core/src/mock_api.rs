//! Lookup-table API implementation. Keys are canonical call serializations,
//! so probing is insensitive to slot order and value padding. Any call that
//! is not a key gets the in-band failure sentinel.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{
    parse_call, parse_response, serialize_call, ApiCall, ApiResponse, ApiSchema, Episode,
    ParseError, Speaker,
};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("episode {episode}, turn {turn}: {source}")]
    Parse {
        episode: usize,
        turn: usize,
        source: ParseError,
    },
    #[error("goal intent {0:?} has no schema")]
    UnknownIntent(String),
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that answers API calls.
pub trait ApiBackend: Send + Sync {
    fn invoke(&self, call: &ApiCall) -> ApiResponse;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApiTable {
    entries: BTreeMap<String, ApiResponse>,
}

#[derive(Serialize, Deserialize)]
struct TableLine {
    call: ApiCall,
    response: ApiResponse,
}

fn key(call: &ApiCall) -> String {
    serialize_call(call)
}

impl ApiTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or overwrites the entry for `call`.
    pub fn insert(&mut self, call: &ApiCall, response: ApiResponse) {
        self.entries.insert(key(call), response);
    }

    pub fn get(&self, call: &ApiCall) -> Option<&ApiResponse> {
        self.entries.get(&key(call))
    }

    pub fn invoke(&self, call: &ApiCall) -> ApiResponse {
        self.get(call).cloned().unwrap_or(ApiResponse::Failure)
    }

    /// Entries in canonical key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ApiResponse)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn merge(&mut self, other: &ApiTable) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Every (call, following response) pair found in `episodes`; later
    /// duplicates overwrite earlier ones.
    pub fn from_episodes(episodes: &[Episode]) -> Result<Self, TableError> {
        let mut table = Self::new();
        for (e, ep) in episodes.iter().enumerate() {
            let turns = &ep.turns;
            for (t, turn) in turns.iter().enumerate() {
                if turn.speaker != Speaker::AssistantCall {
                    continue;
                }
                let Some(next) = turns.get(t + 1).filter(|n| n.speaker == Speaker::ApiResp) else {
                    continue;
                };
                let wrap = |turn: usize| move |source| TableError::Parse {
                    episode: e,
                    turn,
                    source,
                };
                let call = parse_call(&turn.text).map_err(wrap(t))?;
                let response = parse_response(&next.text).map_err(wrap(t + 1))?;
                table.insert(&call, response);
            }
        }
        Ok(table)
    }

    /// Builds a table holding every goal with a generated payload. Payload
    /// values depend only on `seed` and the goal's canonical form.
    pub fn synthesize(
        schemas: &[ApiSchema],
        goals: &[ApiCall],
        seed: u64,
    ) -> Result<Self, TableError> {
        let mut table = Self::new();
        for goal in goals {
            if !schemas.iter().any(|s| s.intent() == goal.intent()) {
                return Err(TableError::UnknownIntent(goal.intent().to_string()));
            }
            let mut rng = seed::rng(&[seed, seed::str_hash(&key(goal))]);
            let code: String = (0..8)
                .map(|_| char::from(b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789"[rng.random_range(0..32)]))
                .collect();
            let mut payload = BTreeMap::new();
            payload.insert("confirmation".to_string(), code);
            payload.insert("status".to_string(), "confirmed".to_string());
            table.insert(goal, ApiResponse::Payload(payload));
        }
        Ok(table)
    }

    /// JSON Lines, one `{"call": ..., "response": ...}` object per entry.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), TableError> {
        let mut out = Vec::new();
        for (k, v) in &self.entries {
            let line = TableLine {
                call: parse_call(k).expect("keys are canonical serializations"),
                response: v.clone(),
            };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.push(b'\n');
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, TableError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut table = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TableLine = serde_json::from_str(&line).map_err(|e| TableError::Line {
                line: i + 1,
                reason: e.to_string(),
            })?;
            table.insert(&parsed.call, parsed.response);
        }
        Ok(table)
    }
}

impl ApiBackend for ApiTable {
    fn invoke(&self, call: &ApiCall) -> ApiResponse {
        ApiTable::invoke(self, call)
    }
}

/// Client for a table served over HTTP: `POST /invoke` with the serialized
/// call as plain text, answered with the serialized response. Transport
/// failures and unparsable answers count as the failure sentinel.
#[derive(Debug, Clone)]
pub struct RemoteApi {
    url: String,
    http: ureq::Agent,
}

impl RemoteApi {
    pub fn new(base: &str, timeout: std::time::Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self {
            url: format!("{}/invoke", base.trim_end_matches('/')),
            http: config.into(),
        }
    }

    fn request(&self, call: &ApiCall) -> Result<String, ureq::Error> {
        let mut resp = self
            .http
            .post(&self.url)
            .content_type("text/plain")
            .send(serialize_call(call))?;
        resp.body_mut().read_to_string()
    }
}

impl ApiBackend for RemoteApi {
    fn invoke(&self, call: &ApiCall) -> ApiResponse {
        match self.request(call) {
            Ok(text) => parse_response(&text).unwrap_or_else(|e| {
                log::warn!("{}: unparsable response: {e}", self.url);
                ApiResponse::Failure
            }),
            Err(e) => {
                log::warn!("{}: {e}", self.url);
                ApiResponse::Failure
            }
        }
    }
}
