//! The act-on-observation contract shared by every agent, plus the built-in
//! agent families.
//!
//! Agents are stateless: everything they know comes from the [`Observation`].
//! Randomness is drawn from `obs.decode.seed` mixed with the history length,
//! so a fixed seed gives bit-identical rollouts.

pub mod exemplar;
mod noise;
mod nucleus;
pub mod phrasebook;
pub mod remote;
mod scripted;

use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{parse_call, parse_schema, ApiCall, ApiSchema, Turn};
use crate::seed;

pub use exemplar::{ExemplarAgent, ExemplarStore};
pub use noise::NoisyAgent;
pub use nucleus::{nucleus_filter, pick, InvalidDistribution};
pub use phrasebook::PhraseBook;
pub use remote::RemoteAgent;
pub use scripted::{ScriptedAssistant, ScriptedUser};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::User => "User",
            Role::Assistant => "Assistant",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
    Nucleus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub p: f64,
    pub seed: u64,
}

impl DecodeConfig {
    pub fn greedy(seed: u64) -> Self {
        Self {
            mode: DecodeMode::Greedy,
            p: 1.0,
            seed,
        }
    }

    pub fn nucleus(p: f64, seed: u64) -> Self {
        Self {
            mode: DecodeMode::Nucleus,
            p,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), InvalidDistribution> {
        if self.p > 0.0 && self.p <= 1.0 {
            Ok(())
        } else {
            Err(InvalidDistribution::BadMass(self.p))
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self::nucleus(0.9, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub role: Role,
    /// Serialized goal for the User, serialized schema for a schema-aware
    /// Assistant, nothing otherwise.
    pub grounding: Option<String>,
    pub history: Vec<Turn>,
    pub decode: DecodeConfig,
}

impl Observation {
    /// Goal carried by a User observation.
    pub fn goal(&self) -> Result<ApiCall, AgentError> {
        let text = self
            .grounding
            .as_deref()
            .ok_or_else(|| AgentError::MalformedGrounding("User observation has no goal".into()))?;
        parse_call(text).map_err(|e| AgentError::MalformedGrounding(e.to_string()))
    }

    /// Schema carried by an Assistant observation, if any.
    pub fn schema(&self) -> Result<Option<ApiSchema>, AgentError> {
        self.grounding
            .as_deref()
            .map(|g| parse_schema(g).map_err(|e| AgentError::MalformedGrounding(e.to_string())))
            .transpose()
    }

    /// Per-turn random stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let role = match self.role {
            Role::User => 1,
            Role::Assistant => 2,
        };
        seed::rng(&[self.decode.seed, role, self.history.len() as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("agent unavailable: {0}")]
    Unavailable(String),
    #[error("malformed grounding: {0}")]
    MalformedGrounding(String),
}

pub trait Agent: Send + Sync {
    fn act(&self, obs: &Observation) -> Result<String, AgentError>;
}

impl<T: Agent + ?Sized> Agent for Arc<T> {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        (**self).act(obs)
    }
}

impl<T: Agent + ?Sized> Agent for Box<T> {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        (**self).act(obs)
    }
}

/// Whitespace tokenization shared by the exemplar agent and the metrics.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}
