//! HTTP client for agents served elsewhere.
//!
//! Wire protocol: `POST /act` with the JSON-encoded [`Observation`]
//! (`{role, grounding, history, decode: {mode, p, seed}}`), answered by
//! `{"utterance": "..."}`. Any non-200 status counts as a failure.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, Observation};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_RETRIES: usize = 2;
/// Request header naming the checkpoint a multi-model server should use.
pub const CHECKPOINT_HEADER: &str = "X-Checkpoint";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActResponse {
    pub utterance: String,
}

#[derive(Debug, Clone)]
pub struct RemoteAgent {
    url: String,
    retries: usize,
    checkpoint: Option<String>,
    http: ureq::Agent,
}

impl RemoteAgent {
    /// `base` is the server root; requests go to `<base>/act`.
    pub fn new(base: &str) -> Self {
        Self::with_timeout(base, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            url: format!("{}/act", base.trim_end_matches('/')),
            retries: DEFAULT_RETRIES,
            checkpoint: None,
            http: config.into(),
        }
    }

    pub fn retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn checkpoint(mut self, checkpoint: impl Into<String>) -> Self {
        self.checkpoint = Some(checkpoint.into());
        self
    }

    fn attempt(&self, obs: &Observation) -> Result<String, ureq::Error> {
        let mut req = self.http.post(&self.url);
        if let Some(ckpt) = &self.checkpoint {
            req = req.header(CHECKPOINT_HEADER, ckpt);
        }
        let mut resp = req.send_json(obs)?;
        let body: ActResponse = resp.body_mut().read_json()?;
        Ok(body.utterance)
    }
}

impl Agent for RemoteAgent {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.attempt(obs) {
                Ok(utterance) => return Ok(utterance),
                Err(e) => {
                    log::warn!("{} attempt {} failed: {e}", self.url, attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(AgentError::Unavailable(format!("{}: {last}", self.url)))
    }
}
