use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use todsim_core::dialogue::{ApiCall, Episode, Origin, Speaker, Turn};
use todsim_core::seed;

pub const DEFAULT_QUESTION: &str = "Which Assistant would you rather use yourself?";
/// System names recorded on control tasks.
pub const GOLD_SYSTEM: &str = "gold";
pub const REPETITIVE_SYSTEM: &str = "repetitive";
const HIDDEN: &str = "[hidden]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    Left,
    Right,
}

impl Choice {
    pub fn other(self) -> Self {
        match self {
            Choice::Left => Choice::Right,
            Choice::Right => Choice::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub id: String,
    pub left: Episode,
    pub right: Episode,
    pub left_system: String,
    pub right_system: String,
    pub question: String,
    pub is_control: bool,
    pub goal_matched: bool,
}

impl EvalTask {
    pub fn system(&self, side: Choice) -> &str {
        match side {
            Choice::Left => &self.left_system,
            Choice::Right => &self.right_system,
        }
    }

    /// For a control task, the side holding the repetitive dialogue.
    pub fn repetitive_side(&self) -> Option<Choice> {
        if !self.is_control {
            return None;
        }
        if self.left_system == REPETITIVE_SYSTEM {
            Some(Choice::Left)
        } else {
            Some(Choice::Right)
        }
    }

    pub fn public(&self) -> PublicTask {
        PublicTask {
            id: self.id.clone(),
            question: self.question.clone(),
            left: PublicSide {
                label: "Assistant 1".into(),
                turns: public_turns(&self.left),
            },
            right: PublicSide {
                label: "Assistant 2".into(),
                turns: public_turns(&self.right),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicTurn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicSide {
    pub label: String,
    pub turns: Vec<PublicTurn>,
}

/// What an annotator sees: utterances only, systems anonymized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicTask {
    pub id: String,
    pub question: String,
    pub left: PublicSide,
    pub right: PublicSide,
}

fn public_turns(ep: &Episode) -> Vec<PublicTurn> {
    ep.turns
        .iter()
        .filter(|t| !t.is_done())
        .filter_map(|t| {
            let speaker = match t.speaker {
                Speaker::User => "User",
                Speaker::AssistantUtt => "Assistant",
                Speaker::AssistantCall | Speaker::ApiResp => return None,
            };
            // A model may echo grammar text inside an utterance.
            let text = if t.text.contains("APICALL:") || t.text.contains("APIRESP:") {
                HIDDEN.to_string()
            } else {
                t.text.clone()
            };
            Some(PublicTurn {
                speaker: speaker.into(),
                text,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub task_id: String,
    pub annotator_id: String,
    pub choice: Choice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    /// RFC 3339; filled in by the service when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("system {system} has no episode for goal {goal}")]
    MissingEpisode { system: String, goal: String },
    #[error("fewer than two systems to compare")]
    TooFewSystems,
    #[error("controls requested but no gold dialogue has an assistant utterance")]
    NoControlSource,
}

/// Gold dialogues from which control pairs are made.
#[derive(Debug, Clone, Default)]
pub struct ControlSpec {
    pub gold: Vec<Episode>,
    /// Number of distinct control tasks to create; 0 disables controls.
    pub n_controls: usize,
}

/// Gold user turns, each answered by the gold dialogue's first assistant
/// utterance. Calls and responses are dropped.
pub fn repetitive_control(gold: &Episode) -> Option<Episode> {
    let repeated = gold
        .turns
        .iter()
        .find(|t| t.speaker == Speaker::AssistantUtt && !t.text.trim().is_empty())?
        .text
        .clone();
    let mut turns = Vec::new();
    for t in &gold.turns {
        if t.speaker == Speaker::User {
            let done = t.is_done();
            turns.push(t.clone());
            if !done {
                turns.push(Turn::new(Speaker::AssistantUtt, repeated.clone()));
            }
        }
    }
    Some(Episode {
        goal: gold.goal.clone(),
        schema: gold.schema.clone(),
        turns,
        success: false,
        domain: gold.domain.clone(),
        fold: gold.fold,
        origin: Origin::Synthetic,
    })
}

/// All unordered system pairs crossed with `goals`, sides drawn from `seed`,
/// followed by `controls.n_controls` control tasks.
pub fn build_tasks(
    runs: &BTreeMap<String, Vec<Episode>>,
    goals: &[ApiCall],
    controls: &ControlSpec,
    seed: u64,
) -> Result<Vec<EvalTask>, BuildError> {
    if runs.len() < 2 {
        return Err(BuildError::TooFewSystems);
    }
    let mut index: BTreeMap<&str, BTreeMap<String, &Episode>> = BTreeMap::new();
    for (system, eps) in runs {
        let by_goal = index.entry(system).or_default();
        for ep in eps {
            by_goal.entry(ep.goal.canonical().to_string()).or_insert(ep);
        }
    }
    let systems: Vec<&str> = runs.keys().map(String::as_str).collect();
    let mut tasks = Vec::new();
    let mut rng = seed::rng(&[seed, 0xACE]);
    for goal in goals {
        let key = goal.canonical().to_string();
        let mut picked = Vec::with_capacity(systems.len());
        for s in &systems {
            let ep = index[s].get(&key).ok_or_else(|| BuildError::MissingEpisode {
                system: s.to_string(),
                goal: key.clone(),
            })?;
            picked.push(*ep);
        }
        for i in 0..systems.len() {
            for j in i + 1..systems.len() {
                let (mut a, mut b) = ((systems[i], picked[i]), (systems[j], picked[j]));
                if rng.random::<bool>() {
                    std::mem::swap(&mut a, &mut b);
                }
                tasks.push(EvalTask {
                    id: format!("task-{:05}", tasks.len()),
                    left: a.1.clone(),
                    right: b.1.clone(),
                    left_system: a.0.to_string(),
                    right_system: b.0.to_string(),
                    question: DEFAULT_QUESTION.into(),
                    is_control: false,
                    goal_matched: a.1.goal.canonical() == b.1.goal.canonical(),
                });
            }
        }
    }
    if controls.n_controls > 0 {
        let sources: Vec<(&Episode, Episode)> = controls
            .gold
            .iter()
            .filter_map(|g| repetitive_control(g).map(|r| (g, r)))
            .collect();
        if sources.is_empty() {
            return Err(BuildError::NoControlSource);
        }
        for c in 0..controls.n_controls {
            let (gold, rep) = &sources[c % sources.len()];
            let gold_left = rng.random::<bool>();
            let (left, right, ls, rs) = if gold_left {
                ((*gold).clone(), rep.clone(), GOLD_SYSTEM, REPETITIVE_SYSTEM)
            } else {
                (rep.clone(), (*gold).clone(), REPETITIVE_SYSTEM, GOLD_SYSTEM)
            };
            tasks.push(EvalTask {
                id: format!("ctrl-{c:05}"),
                left,
                right,
                left_system: ls.into(),
                right_system: rs.into(),
                question: DEFAULT_QUESTION.into(),
                is_control: true,
                goal_matched: true,
            });
        }
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use todsim_core::dialogue::Fold;

    pub(crate) fn episode(goal: &ApiCall, tag: &str) -> Episode {
        Episode {
            goal: goal.clone(),
            schema: None,
            turns: vec![
                Turn::new(Speaker::User, format!("hello {tag}")),
                Turn::new(Speaker::AssistantUtt, format!("how can I help {tag}")),
                Turn::new(Speaker::User, "book it"),
                Turn::new(Speaker::AssistantCall, goal.to_string()),
                Turn::new(Speaker::ApiResp, "APIRESP: status = ok"),
                Turn::new(Speaker::AssistantUtt, "done"),
                Turn::new(Speaker::User, todsim_core::dialogue::DONE),
            ],
            success: true,
            domain: "Gym".into(),
            fold: Fold::Test,
            origin: Origin::Synthetic,
        }
    }

    #[test]
    fn repetitive_control_repeats_first_utterance() {
        let goal = ApiCall::new("Book", [("day", "monday")]).unwrap();
        let rep = repetitive_control(&episode(&goal, "x")).unwrap();
        let said: Vec<&str> = rep
            .turns
            .iter()
            .filter(|t| t.speaker == Speaker::AssistantUtt)
            .map(|t| t.text.as_str())
            .collect();
        assert_eq!(said, ["how can I help x", "how can I help x"]);
        assert_eq!(rep.n_calls(), 0);
        assert!(rep.turns.last().unwrap().is_done());
    }

    #[test]
    fn public_view_hides_grammar_and_systems() {
        let goal = ApiCall::new("Book", [("day", "monday")]).unwrap();
        let mut bad = episode(&goal, "y");
        bad.turns[1].text = "APICALL: api_name = Book".into();
        let task = EvalTask {
            id: "t".into(),
            left: episode(&goal, "x"),
            right: bad,
            left_system: "secret-a".into(),
            right_system: "secret-b".into(),
            question: DEFAULT_QUESTION.into(),
            is_control: false,
            goal_matched: true,
        };
        let json = serde_json::to_string(&task.public()).unwrap();
        assert!(!json.contains("APICALL:") && !json.contains("APIRESP:"));
        assert!(!json.contains("secret"));
        assert!(!json.contains("[DONE]"));
        assert_eq!(task.public().left.turns.len(), 4);
    }
}
