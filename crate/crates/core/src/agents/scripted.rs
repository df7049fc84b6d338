//! Rule-based agents that speak and understand exactly the phrasebook
//! templates. Paired together with a schema they always reach the goal.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::nucleus::pick;
use super::phrasebook::{PhraseBook, CLAUSE_JOIN};
use super::{Agent, AgentError, Observation};
use crate::dialogue::{parse_call, parse_response, ApiCall, ApiResponse, Speaker, Turn, DONE};

fn choose(options: &[String], obs: &Observation, salt: u64) -> String {
    let mut rng = crate::seed::rng(&[obs.decode.seed, salt, obs.history.len() as u64]);
    let weights = vec![1.0; options.len()];
    let i = pick(&weights, &obs.decode, &mut rng).unwrap_or(0);
    options.get(i).cloned().unwrap_or_default()
}

/// Slot values the User has stated so far, as understood through `book`.
/// Only slots in `wanted` are kept; later statements override earlier ones.
pub(crate) fn stated_values(
    book: &PhraseBook,
    intent: &str,
    history: &[Turn],
    wanted: &BTreeSet<String>,
) -> BTreeMap<String, String> {
    let mut values = BTreeMap::new();
    let mut asked: Option<&str> = None;
    for turn in history {
        match turn.speaker {
            Speaker::AssistantUtt => asked = book.asked_slot(&turn.text),
            Speaker::User => {
                for (slot, value) in book.extract(intent, &turn.text, asked) {
                    if wanted.contains(&slot) {
                        values.insert(slot, value);
                    }
                }
                asked = None;
            }
            _ => {}
        }
    }
    values
}

/// True when the last two turns are a successful API response followed by
/// an Assistant utterance.
pub(crate) fn after_success(history: &[Turn]) -> bool {
    match history {
        [.., resp, utt] => {
            utt.speaker == Speaker::AssistantUtt
                && resp.speaker == Speaker::ApiResp
                && parse_response(&resp.text).is_ok_and(|r| !r.is_failure())
        }
        _ => false,
    }
}

/// Goal-driven User. Reveals `reveal_k` pending slots per turn, answers
/// questions about a slot, and says `[DONE]` once the Assistant speaks after
/// a successful API response.
#[derive(Debug, Clone)]
pub struct ScriptedUser {
    book: Arc<PhraseBook>,
    reveal_k: usize,
}

impl ScriptedUser {
    pub fn new(book: Arc<PhraseBook>) -> Self {
        Self { book, reveal_k: 1 }
    }

    pub fn with_reveal_k(mut self, k: usize) -> Self {
        self.reveal_k = k.max(1);
        self
    }

    fn respond(&self, goal: &ApiCall, obs: &Observation) -> String {
        let history = &obs.history;
        if after_success(history) {
            return DONE.to_string();
        }
        let intent = goal.intent();
        let slots: Vec<&String> = goal.slots().keys().collect();
        if slots.is_empty() {
            return choose(&self.book.opening, obs, 11);
        }
        let asked = history
            .last()
            .filter(|t| t.speaker == Speaker::AssistantUtt)
            .and_then(|t| self.book.asked_slot(&t.text))
            .filter(|s| goal.get(s).is_some());
        if let Some(slot) = asked {
            let value = goal.get(slot).unwrap_or_default();
            return choose(&self.book.answer_options(intent, slot, value), obs, 12);
        }
        let wanted: BTreeSet<String> = goal.slots().keys().cloned().collect();
        let stated = stated_values(&self.book, intent, history, &wanted);
        let pending: Vec<&String> = slots
            .iter()
            .copied()
            .filter(|s| stated.get(*s).map(String::as_str) != goal.get(s).map(str::trim))
            .collect();
        let chosen: Vec<&String> = if pending.is_empty() {
            let n_user = history.iter().filter(|t| t.speaker == Speaker::User).count();
            vec![slots[n_user % slots.len()]]
        } else {
            pending.into_iter().take(self.reveal_k).collect()
        };
        let parts: Vec<String> = chosen
            .iter()
            .enumerate()
            .map(|(i, slot)| {
                let value = goal.get(slot).unwrap_or_default();
                choose(&self.book.reveal_options(intent, slot, value), obs, 13 + i as u64)
            })
            .collect();
        parts.join(CLAUSE_JOIN)
    }
}

impl Agent for ScriptedUser {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        let goal = obs.goal()?;
        Ok(self.respond(&goal, obs))
    }
}

/// Schema-driven Assistant. Asks for the first missing slot, calls the API
/// once every schema slot is known, then confirms or apologizes. Without a
/// schema it stays silent.
#[derive(Debug, Clone)]
pub struct ScriptedAssistant {
    book: Arc<PhraseBook>,
}

impl ScriptedAssistant {
    pub fn new(book: Arc<PhraseBook>) -> Self {
        Self { book }
    }
}

impl Agent for ScriptedAssistant {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        let Some(schema) = obs.schema()? else {
            return Ok(String::new());
        };
        let history = &obs.history;
        if let Some(last) = history.last().filter(|t| t.speaker == Speaker::ApiResp) {
            let ok = parse_response(&last.text).is_ok_and(|r| !r.is_failure());
            let options = if ok { &self.book.confirm } else { &self.book.apologize };
            return Ok(choose(options, obs, 21));
        }
        let values = stated_values(&self.book, schema.intent(), history, schema.slot_names());
        if let Some(missing) = schema.slot_names().iter().find(|s| !values.contains_key(*s)) {
            return Ok(choose(&self.book.ask_options(missing), obs, 22));
        }
        let call = ApiCall::new(schema.intent(), values).expect("schema names are valid tokens");
        // Repeat the earlier outcome rather than re-issuing an identical call.
        let mut previous: Option<ApiResponse> = None;
        for pair in history.windows(2) {
            if pair[0].speaker == Speaker::AssistantCall
                && parse_call(&pair[0].text).is_ok_and(|c| c == call)
            {
                previous = Some(parse_response(&pair[1].text).unwrap_or(ApiResponse::Failure));
            }
        }
        Ok(match previous {
            Some(resp) if !resp.is_failure() => choose(&self.book.confirm, obs, 21),
            Some(_) => choose(&self.book.apologize, obs, 21),
            None => call.to_string(),
        })
    }
}
