use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grammar::{calls_equal, parse_call, ApiCall, ApiSchema};

/// The terminal User utterance.
pub const DONE: &str = "[DONE]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Speaker {
    User,
    AssistantCall,
    ApiResp,
    AssistantUtt,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Speaker::User => "User",
            Speaker::AssistantCall => "AssistantCall",
            Speaker::ApiResp => "ApiResp",
            Speaker::AssistantUtt => "AssistantUtt",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.speaker == Speaker::User && self.text == DONE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Fold {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Origin {
    Human,
    Synthetic,
}

/// Structural problems in a turn sequence.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("turn {index}: {reason}")]
pub struct EpisodeError {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Episode {
    pub goal: ApiCall,
    pub schema: Option<ApiSchema>,
    pub turns: Vec<Turn>,
    pub success: bool,
    pub domain: String,
    pub fold: Fold,
    pub origin: Origin,
}

/// One User -> (call -> response)? -> utterance cycle, borrowed from an episode.
/// The last round of an episode may stop after the User turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Round<'a> {
    pub user: &'a str,
    pub call: Option<&'a str>,
    pub response: Option<&'a str>,
    pub utterance: Option<&'a str>,
    /// Index of the User turn inside `Episode::turns`.
    pub start: usize,
}

impl Round<'_> {
    /// True when the Assistant got to answer in this round.
    pub fn is_complete(&self) -> bool {
        self.utterance.is_some()
    }
}

impl Episode {
    /// Success recomputed from the turns: some call turn equals the goal.
    pub fn compute_success(&self) -> bool {
        self.calls().any(|c| calls_equal(&c, &self.goal))
    }

    /// Parsed call turns, skipping any that do not parse.
    pub fn calls(&self) -> impl Iterator<Item = ApiCall> + '_ {
        self.turns
            .iter()
            .filter(|t| t.speaker == Speaker::AssistantCall)
            .filter_map(|t| parse_call(&t.text).ok())
    }

    pub fn n_calls(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.speaker == Speaker::AssistantCall)
            .count()
    }

    /// Short content hash used in ledgers and for deduplication.
    pub fn id(&self) -> String {
        let json = serde_json::to_string(self).expect("episodes always serialize");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Splits the turns into rounds. Assumes the cycle grammar holds; call
    /// [`Episode::validate`] first on untrusted input.
    pub fn rounds(&self) -> Vec<Round<'_>> {
        let mut rounds: Vec<Round<'_>> = Vec::new();
        for (i, turn) in self.turns.iter().enumerate() {
            let text = turn.text.as_str();
            match turn.speaker {
                Speaker::User => rounds.push(Round {
                    user: text,
                    call: None,
                    response: None,
                    utterance: None,
                    start: i,
                }),
                Speaker::AssistantCall => {
                    if let Some(r) = rounds.last_mut() {
                        r.call = Some(text);
                    }
                }
                Speaker::ApiResp => {
                    if let Some(r) = rounds.last_mut() {
                        r.response = Some(text);
                    }
                }
                Speaker::AssistantUtt => {
                    if let Some(r) = rounds.last_mut() {
                        r.utterance = Some(text);
                    }
                }
            }
        }
        rounds
    }

    /// Checks the turn cycle, the `[DONE]` placement, that call turns parse,
    /// and that the stored success flag matches the turns.
    pub fn validate(&self) -> Result<(), EpisodeError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Expect {
            User,
            CallOrUtt,
            Resp,
            Utt,
        }
        let err = |index: usize, reason: &str| EpisodeError {
            index,
            reason: reason.to_string(),
        };
        let mut expect = Expect::User;
        for (i, turn) in self.turns.iter().enumerate() {
            expect = match (expect, turn.speaker) {
                (Expect::User, Speaker::User) => {
                    if turn.text == DONE && i + 1 != self.turns.len() {
                        return Err(err(i, "turns follow the [DONE] token"));
                    }
                    Expect::CallOrUtt
                }
                (Expect::CallOrUtt, Speaker::AssistantCall) => {
                    parse_call(&turn.text).map_err(|e| err(i, &format!("bad call: {e}")))?;
                    Expect::Resp
                }
                (Expect::CallOrUtt, Speaker::AssistantUtt) | (Expect::Utt, Speaker::AssistantUtt) => {
                    Expect::User
                }
                (Expect::Resp, Speaker::ApiResp) => Expect::Utt,
                (_, speaker) => {
                    return Err(err(i, &format!("unexpected {speaker} turn")));
                }
            };
        }
        if matches!(expect, Expect::Resp | Expect::Utt) {
            return Err(err(self.turns.len(), "round ends inside an API exchange"));
        }
        if self.success != self.compute_success() {
            return Err(err(self.turns.len(), "success flag disagrees with the call turns"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn goal() -> ApiCall {
        ApiCall::new("BuyTicket", [("movie", "Dune"), ("qty", "2")]).unwrap()
    }

    fn episode(turns: Vec<Turn>) -> Episode {
        let mut ep = Episode {
            goal: goal(),
            schema: None,
            turns,
            success: false,
            domain: "Movies".into(),
            fold: Fold::Train,
            origin: Origin::Human,
        };
        ep.success = ep.compute_success();
        ep
    }

    #[test]
    fn cycle_and_success() {
        let ep = episode(vec![
            Turn::new(Speaker::User, "I need the movie to be Dune ."),
            Turn::new(Speaker::AssistantUtt, "What qty would you like ?"),
            Turn::new(Speaker::User, "2 please ."),
            Turn::new(Speaker::AssistantCall, "APICALL: api_name = BuyTicket ; qty = 2 ; movie = Dune"),
            Turn::new(Speaker::ApiResp, "APIRESP: ref = A1"),
            Turn::new(Speaker::AssistantUtt, "Your request is confirmed ."),
            Turn::new(Speaker::User, DONE),
        ]);
        assert!(ep.success);
        ep.validate().unwrap();
        let rounds = ep.rounds();
        assert_eq!(rounds.len(), 3);
        assert!(rounds[1].call.is_some() && rounds[1].is_complete());
        assert!(!rounds[2].is_complete());
    }

    #[test]
    fn rejects_broken_cycles() {
        let ep = episode(vec![
            Turn::new(Speaker::User, "hi"),
            Turn::new(Speaker::AssistantCall, "APICALL: api_name = X"),
            Turn::new(Speaker::AssistantUtt, "ok"),
        ]);
        assert!(ep.validate().is_err());
        let ep = episode(vec![Turn::new(Speaker::User, DONE), Turn::new(Speaker::AssistantUtt, "x")]);
        assert!(ep.validate().is_err());
        let mut ep = episode(vec![Turn::new(Speaker::User, DONE)]);
        ep.validate().unwrap();
        ep.success = true;
        assert!(ep.validate().is_err());
    }

    #[test]
    fn json_field_names() {
        let ep = episode(vec![Turn::new(Speaker::User, DONE)]);
        let v: serde_json::Value = serde_json::to_value(&ep).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["domain", "fold", "goal", "origin", "schema", "success", "turns"]);
        assert_eq!(v["goal"], "APICALL: api_name = BuyTicket ; movie = Dune ; qty = 2");
        assert_eq!(v["turns"][0]["speaker"], "User");
        let back: Episode = serde_json::from_value(v).unwrap();
        assert_eq!(back, ep);
        assert_eq!(back.id().len(), 16);
    }
}
