use std::sync::Arc;

use rand::Rng;

use super::{Agent, AgentError, Observation, Role};
use crate::dialogue::{parse_call, ApiCall, CALL_PREFIX};
use crate::seed;

/// Wraps an agent and corrupts each goal slot with probability `epsilon`.
///
/// The corruption decision is drawn once per (rollout seed, slot), so a
/// corrupted slot stays corrupted for the whole dialogue. A User speaks the
/// corrupted value; an Assistant puts it into its API calls.
pub struct NoisyAgent {
    inner: Arc<dyn Agent>,
    epsilon: f64,
}

impl NoisyAgent {
    pub fn new(inner: Arc<dyn Agent>, epsilon: f64) -> Self {
        Self {
            inner,
            epsilon: epsilon.clamp(0.0, 1.0),
        }
    }

    fn corrupt(&self, call: &ApiCall, seed: u64, salt: u64) -> ApiCall {
        let slots = call.slots().iter().map(|(slot, value)| {
            let mut rng = seed::rng(&[seed, salt, seed::str_hash(slot)]);
            let hit = rng.random::<f64>() < self.epsilon;
            let value = if hit { garble(value) } else { value.clone() };
            (slot.clone(), value)
        });
        ApiCall::new(call.intent(), slots).expect("names were already valid")
    }
}

fn garble(value: &str) -> String {
    let reversed: String = value.trim().chars().rev().collect();
    if reversed != value.trim() {
        reversed
    } else {
        format!("{}x", value.trim())
    }
}

impl Agent for NoisyAgent {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        if self.epsilon == 0.0 {
            return self.inner.act(obs);
        }
        match obs.role {
            Role::User => {
                let goal = obs.goal()?;
                let mut noisy = obs.clone();
                noisy.grounding = Some(self.corrupt(&goal, obs.decode.seed, 0x05e4).to_string());
                self.inner.act(&noisy)
            }
            Role::Assistant => {
                let out = self.inner.act(obs)?;
                if !out.trim_start().starts_with(CALL_PREFIX) {
                    return Ok(out);
                }
                match parse_call(&out) {
                    Ok(call) => Ok(self.corrupt(&call, obs.decode.seed, 0xa551).to_string()),
                    Err(_) => Ok(out),
                }
            }
        }
    }
}
