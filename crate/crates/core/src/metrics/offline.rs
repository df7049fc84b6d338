use crate::agents::{Agent, AgentError, DecodeConfig, Observation, Role};
use crate::dialogue::{parse_call, ApiCall, Episode, CALL_PREFIX};

use super::{bleu4, jga_counts, gold_round_calls, token_exact_match, tokenize, MetricError};

#[derive(Debug, thiserror::Error)]
pub enum OfflineError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Teacher-forced scores of an Assistant against gold episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineScores {
    pub jga: f64,
    pub bleu4: f64,
    pub tem: f64,
}

fn as_call(text: &str) -> Option<ApiCall> {
    if text.trim_start().starts_with(CALL_PREFIX) {
        parse_call(text).ok()
    } else {
        None
    }
}

/// Replays every complete gold round: the Assistant sees the gold history up
/// to the User turn and its first act is scored as the round's call (JGA);
/// it then sees the gold history up to the gold utterance and that act is
/// scored against it (BLEU-4, TEM).
pub fn teacher_forced(
    assistant: &dyn Agent,
    gold: &[Episode],
    schema_aware: bool,
    decode: DecodeConfig,
) -> Result<OfflineScores, OfflineError> {
    let mut hyp_calls = Vec::new();
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for ep in gold {
        let grounding = schema_aware.then(|| ep.goal.schema().to_string());
        let observe = |upto: usize| Observation {
            role: Role::Assistant,
            grounding: grounding.clone(),
            history: ep.turns[..upto].to_vec(),
            decode,
        };
        for round in ep.rounds().into_iter().filter(|r| r.is_complete()) {
            let first = assistant.act(&observe(round.start + 1))?;
            hyp_calls.push(as_call(&first));
            let utt_at = round.start + 1 + if round.call.is_some() { 2 } else { 0 };
            let said = assistant.act(&observe(utt_at))?;
            hyps.push(tokenize(&said));
            refs.push(tokenize(round.utterance.unwrap_or_default()));
        }
    }
    let (correct, scored) = jga_counts(&gold_round_calls(gold), &hyp_calls, false)?;
    if scored == 0 {
        return Err(MetricError::EmptyInput.into());
    }
    Ok(OfflineScores {
        jga: correct as f64 / scored as f64,
        bleu4: bleu4(&hyps, &refs)?,
        tem: token_exact_match(&hyps, &refs)?,
    })
}
