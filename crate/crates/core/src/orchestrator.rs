//! Runs the turn cycle between a User agent, an Assistant agent and an API.
//!
//! Each round is: the User speaks; the Assistant either answers in words or
//! emits an `APICALL:` string, in which case the API response is appended and
//! the Assistant is asked again for its utterance. A dialogue ends on the
//! User's `[DONE]` or after `max_rounds` rounds.
//!
//! The User sees the serialized goal with every observation; a schema-aware
//! Assistant sees the serialized schema. The goal never reaches the Assistant.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentError, DecodeConfig, Observation, Role};
use crate::dialogue::{parse_call, ApiCall, ApiResponse, Episode, Fold, Origin, Speaker, Turn, CALL_PREFIX, DONE};
use crate::mock_api::ApiBackend;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub max_rounds: usize,
    pub rollouts_per_goal: usize,
    pub decode: DecodeConfig,
    pub schema_aware: bool,
    /// Leave errored rollouts out of TSR denominators.
    #[serde(default)]
    pub exclude_errors: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_rounds: 10,
            rollouts_per_goal: 20,
            decode: DecodeConfig::nucleus(0.9, 0),
            schema_aware: false,
            exclude_errors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("max_rounds must be at least 1")]
    MaxRounds,
    #[error("rollouts_per_goal must be at least 1")]
    Rollouts,
    #[error("nucleus p must lie in (0, 1], got {0}")]
    TopP(f64),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_rounds == 0 {
            return Err(ConfigError::MaxRounds);
        }
        if self.rollouts_per_goal == 0 {
            return Err(ConfigError::Rollouts);
        }
        self.decode.validate().map_err(|_| ConfigError::TopP(self.decode.p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub goal_idx: usize,
    pub rollout_idx: usize,
    pub seed: u64,
    pub episode: Episode,
    pub error: Option<AgentError>,
}

impl Rollout {
    /// Audit line: `goal_idx \t rollout_idx \t success \t n_turns`.
    pub fn progress_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.goal_idx,
            self.rollout_idx,
            self.episode.success,
            self.episode.turns.len()
        )
    }
}

/// Seed of one rollout, derived from the batch seed and its position.
pub fn rollout_seed(batch_seed: u64, goal_idx: usize, rollout_idx: usize) -> u64 {
    seed::mix(&[batch_seed, goal_idx as u64, rollout_idx as u64])
}

/// Success rate over rollouts, optionally leaving errored ones out.
pub fn rollout_tsr(rollouts: &[Rollout], exclude_errors: bool) -> Option<f64> {
    let kept: Vec<&Rollout> = rollouts
        .iter()
        .filter(|r| !(exclude_errors && r.error.is_some()))
        .collect();
    if kept.is_empty() {
        return None;
    }
    let ok = kept
        .iter()
        .filter(|r| r.error.is_none() && r.episode.success)
        .count();
    Some(ok as f64 / kept.len() as f64)
}

pub struct Simulator<'a> {
    pub user: &'a dyn Agent,
    pub assistant: &'a dyn Agent,
    pub api: &'a dyn ApiBackend,
    /// Intent -> domain label for produced episodes.
    pub domains: &'a BTreeMap<String, String>,
    pub fold: Fold,
    pub origin: Origin,
}

impl<'a> Simulator<'a> {
    pub fn new(user: &'a dyn Agent, assistant: &'a dyn Agent, api: &'a dyn ApiBackend, domains: &'a BTreeMap<String, String>) -> Self {
        Self {
            user,
            assistant,
            api,
            domains,
            fold: Fold::Train,
            origin: Origin::Synthetic,
        }
    }

    /// One dialogue for `goal`, using `seed` for every decoding decision.
    pub fn run_dialogue(&self, goal: &ApiCall, cfg: &SimConfig, seed: u64) -> (Episode, Option<AgentError>) {
        self.run_dialogue_observed(goal, cfg, seed, &mut |_| {})
    }

    /// Like [`Simulator::run_dialogue`], showing every observation to `tap`
    /// before the agent acts on it.
    pub fn run_dialogue_observed(
        &self,
        goal: &ApiCall,
        cfg: &SimConfig,
        seed: u64,
        tap: &mut dyn FnMut(&Observation),
    ) -> (Episode, Option<AgentError>) {
        let schema = cfg.schema_aware.then(|| goal.schema());
        let user_grounding = Some(goal.to_string());
        let assistant_grounding = schema.as_ref().map(ToString::to_string);
        let decode = cfg.decode.with_seed(seed);
        let mut turns: Vec<Turn> = Vec::new();
        let mut error = None;

        let mut ask = |agent: &dyn Agent, role: Role, turns: &[Turn]| {
            let obs = Observation {
                role,
                grounding: match role {
                    Role::User => user_grounding.clone(),
                    Role::Assistant => assistant_grounding.clone(),
                },
                history: turns.to_vec(),
                decode,
            };
            tap(&obs);
            agent.act(&obs)
        };

        for _ in 0..cfg.max_rounds {
            let round_start = turns.len();
            let result = (|| -> Result<bool, AgentError> {
                let said = ask(self.user, Role::User, &turns)?;
                let done = said == DONE;
                turns.push(Turn::new(Speaker::User, said));
                if done {
                    return Ok(true);
                }
                let reply = ask(self.assistant, Role::Assistant, &turns)?;
                if reply.trim_start().starts_with(CALL_PREFIX) {
                    let response = match parse_call(&reply) {
                        Ok(call) => self.api.invoke(&call),
                        Err(_) => ApiResponse::Failure,
                    };
                    turns.push(Turn::new(Speaker::AssistantCall, reply));
                    turns.push(Turn::new(Speaker::ApiResp, response.to_string()));
                    let utterance = ask(self.assistant, Role::Assistant, &turns)?;
                    turns.push(Turn::new(Speaker::AssistantUtt, utterance));
                } else {
                    turns.push(Turn::new(Speaker::AssistantUtt, reply));
                }
                Ok(false)
            })();
            match result {
                Ok(true) => break,
                Ok(false) => {}
                Err(e) => {
                    turns.truncate(round_start);
                    error = Some(e);
                    break;
                }
            }
        }

        let mut episode = Episode {
            goal: goal.clone(),
            schema,
            turns,
            success: false,
            domain: self
                .domains
                .get(goal.intent())
                .cloned()
                .unwrap_or_else(|| "unknown".to_string()),
            fold: self.fold,
            origin: self.origin,
        };
        episode.success = episode.compute_success();
        (episode, error)
    }

    /// `rollouts_per_goal` dialogues per goal, in (goal, rollout) order.
    /// Rollouts run in parallel on the current rayon pool.
    pub fn run_batch(&self, goals: &[ApiCall], cfg: &SimConfig) -> Vec<Rollout> {
        let jobs: Vec<(usize, usize)> = (0..goals.len())
            .flat_map(|g| (0..cfg.rollouts_per_goal).map(move |r| (g, r)))
            .collect();
        jobs.into_par_iter()
            .map(|(g, r)| {
                let seed = rollout_seed(cfg.decode.seed, g, r);
                let (episode, error) = self.run_dialogue(&goals[g], cfg, seed);
                Rollout {
                    goal_idx: g,
                    rollout_idx: r,
                    seed,
                    episode,
                    error,
                }
            })
            .collect()
    }
}
