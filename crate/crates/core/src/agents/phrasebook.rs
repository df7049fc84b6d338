//! Utterance templates shared by the scripted agents.
//!
//! Templates use two placeholders: `<slot>` for a slot name and `<value>` for
//! a slot value. Generic templates mention the slot name and so work for any
//! intent. Intent-specific templates are bound to one slot and only carry the
//! value, which is what makes some domains hard for agents that never saw
//! their phrasing.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const SLOT: &str = "<slot>";
pub const VALUE: &str = "<value>";

/// Separator between clauses when one turn reveals several slots.
pub const CLAUSE_JOIN: &str = " and ";

/// A compiled template. Matching is anchored at both ends.
#[derive(Debug, Clone)]
pub struct Pattern {
    template: String,
    regex: Regex,
    has_slot: bool,
}

impl Pattern {
    pub fn compile(template: &str) -> Self {
        let mut src = String::from("^");
        let mut rest = template;
        let mut has_slot = false;
        loop {
            let next_slot = rest.find(SLOT);
            let next_value = rest.find(VALUE);
            let (at, is_slot) = match (next_slot, next_value) {
                (Some(s), Some(v)) if s < v => (s, true),
                (Some(s), None) => (s, true),
                (_, Some(v)) => (v, false),
                (None, None) => break,
            };
            src.push_str(&regex::escape(&rest[..at]));
            if is_slot && !has_slot {
                src.push_str(r"(?P<slot>\S+)");
                has_slot = true;
                rest = &rest[at + SLOT.len()..];
            } else if is_slot {
                src.push_str(r"\S+");
                rest = &rest[at + SLOT.len()..];
            } else {
                src.push_str(if src.contains("(?P<value>") { "(?:.+?)" } else { "(?P<value>.+?)" });
                rest = &rest[at + VALUE.len()..];
            }
        }
        src.push_str(&regex::escape(rest));
        src.push('$');
        Self {
            template: template.to_string(),
            regex: Regex::new(&src).expect("escaped template compiles"),
            has_slot,
        }
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn has_slot(&self) -> bool {
        self.has_slot
    }

    /// `(slot, value)` captures; `slot` is `None` for value-only templates.
    pub fn captures<'t>(&self, text: &'t str) -> Option<(Option<&'t str>, &'t str)> {
        let caps = self.regex.captures(text)?;
        let value = caps.name("value")?.as_str();
        Some((caps.name("slot").map(|m| m.as_str()), value))
    }

    /// Slot captured by a template with `<slot>` and no `<value>`.
    pub fn slot_only<'t>(&self, text: &'t str) -> Option<&'t str> {
        let caps = self.regex.captures(text)?;
        caps.name("slot").map(|m| m.as_str())
    }
}

pub fn render(template: &str, slot: &str, value: &str) -> String {
    template.replace(SLOT, slot).replace(VALUE, value)
}

/// Splits a User turn into clauses.
pub fn clauses(text: &str) -> impl Iterator<Item = &str> {
    text.split(CLAUSE_JOIN).map(str::trim).filter(|c| !c.is_empty())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentPhrasing {
    /// Whether the User may also use the generic templates for this intent.
    pub generic: bool,
    /// Slot-bound reveal templates (carry `<value>` only).
    #[serde(default)]
    pub reveal: BTreeMap<String, Vec<String>>,
    /// Slot-bound answers to "what <slot>" questions.
    #[serde(default)]
    pub answer: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Default)]
struct Compiled {
    reveal: Vec<Pattern>,
    answer: Vec<Pattern>,
    ask: Vec<Pattern>,
    bound: BTreeMap<String, Vec<(String, Pattern)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhraseBook {
    pub opening: Vec<String>,
    pub reveal: Vec<String>,
    pub answer: Vec<String>,
    pub ask: Vec<String>,
    pub confirm: Vec<String>,
    pub apologize: Vec<String>,
    #[serde(default)]
    pub intents: BTreeMap<String, IntentPhrasing>,
    #[serde(skip)]
    compiled: OnceLock<Compiled>,
}

impl PartialEq for PhraseBook {
    fn eq(&self, other: &Self) -> bool {
        self.opening == other.opening
            && self.reveal == other.reveal
            && self.answer == other.answer
            && self.ask == other.ask
            && self.confirm == other.confirm
            && self.apologize == other.apologize
            && self.intents == other.intents
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for PhraseBook {
    fn default() -> Self {
        Self {
            opening: strings(&["Can you help me with something ?"]),
            reveal: strings(&[
                "I need the <slot> to be <value> .",
                "The <slot> should be <value> .",
                "Please set the <slot> to <value> .",
                "Let us make the <slot> <value> .",
            ]),
            answer: strings(&["<value> please .", "Make it <value> ."]),
            ask: strings(&["What <slot> would you like ?", "Which <slot> do you want ?"]),
            confirm: strings(&["Your request is confirmed .", "All set , that is done ."]),
            apologize: strings(&["Sorry , that did not work .", "I could not complete that ."]),
            intents: BTreeMap::new(),
            compiled: OnceLock::new(),
        }
    }
}

impl PhraseBook {
    pub fn with_intents(intents: BTreeMap<String, IntentPhrasing>) -> Self {
        Self {
            intents,
            ..Self::default()
        }
    }

    fn compiled(&self) -> &Compiled {
        self.compiled.get_or_init(|| {
            let all = |v: &[String]| v.iter().map(|t| Pattern::compile(t)).collect::<Vec<_>>();
            let mut bound = BTreeMap::new();
            for (intent, ph) in &self.intents {
                let mut pats = Vec::new();
                for (slot, ts) in ph.reveal.iter().chain(ph.answer.iter()) {
                    for t in ts {
                        pats.push((slot.clone(), Pattern::compile(t)));
                    }
                }
                bound.insert(intent.clone(), pats);
            }
            Compiled {
                reveal: all(&self.reveal),
                answer: all(&self.answer),
                ask: all(&self.ask),
                bound,
            }
        })
    }

    fn allows_generic(&self, intent: &str) -> bool {
        self.intents.get(intent).is_none_or(|p| p.generic)
    }

    /// Rendered reveal utterances for one slot, generic ones first.
    pub fn reveal_options(&self, intent: &str, slot: &str, value: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.allows_generic(intent) {
            out.extend(self.reveal.iter().map(|t| render(t, slot, value)));
        }
        if let Some(ts) = self.intents.get(intent).and_then(|p| p.reveal.get(slot)) {
            out.extend(ts.iter().map(|t| render(t, slot, value)));
        }
        if out.is_empty() {
            out.extend(self.reveal.iter().map(|t| render(t, slot, value)));
        }
        out
    }

    /// Rendered answers to a question about `slot`.
    pub fn answer_options(&self, intent: &str, slot: &str, value: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.allows_generic(intent) {
            out.extend(self.answer.iter().map(|t| render(t, slot, value)));
        }
        if let Some(ts) = self.intents.get(intent).and_then(|p| p.answer.get(slot)) {
            out.extend(ts.iter().map(|t| render(t, slot, value)));
        }
        if out.is_empty() {
            return self.reveal_options(intent, slot, value);
        }
        out
    }

    pub fn ask_options(&self, slot: &str) -> Vec<String> {
        self.ask.iter().map(|t| render(t, slot, "")).collect()
    }

    /// The slot a question asks about, if the text is a known question.
    pub fn asked_slot<'t>(&self, text: &'t str) -> Option<&'t str> {
        self.compiled().ask.iter().find_map(|p| p.slot_only(text))
    }

    /// Slot values stated in one User turn. `asked` is the slot the previous
    /// Assistant question was about.
    pub fn extract(&self, intent: &str, text: &str, asked: Option<&str>) -> Vec<(String, String)> {
        let c = self.compiled();
        let mut out = Vec::new();
        for clause in clauses(text) {
            if let Some(pats) = c.bound.get(intent) {
                if let Some((slot, value)) = pats
                    .iter()
                    .find_map(|(slot, p)| p.captures(clause).map(|(_, v)| (slot, v)))
                {
                    out.push((slot.clone(), value.trim().to_string()));
                    continue;
                }
            }
            if let Some((slot, value)) = c.reveal.iter().find_map(|p| p.captures(clause)) {
                if let Some(slot) = slot {
                    out.push((slot.to_string(), value.trim().to_string()));
                    continue;
                }
            }
            if let Some(asked) = asked {
                if let Some((_, value)) = c.answer.iter().find_map(|p| p.captures(clause)) {
                    out.push((asked.to_string(), value.trim().to_string()));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_captures() {
        let p = Pattern::compile("I need the <slot> to be <value> .");
        assert_eq!(p.captures("I need the movie to be New York ."), Some((Some("movie"), "New York")));
        assert_eq!(p.captures("I need the movie to be"), None);
        let q = Pattern::compile("What <slot> would you like ?");
        assert_eq!(q.slot_only("What qty would you like ?"), Some("qty"));
        let r = Pattern::compile("a (b) <value> [c]");
        assert_eq!(r.captures("a (b) x.y [c]"), Some((None, "x.y")));
    }

    #[test]
    fn extracts_generic_bound_and_answers() {
        let mut intents = BTreeMap::new();
        intents.insert(
            "FixPipe".to_string(),
            IntentPhrasing {
                generic: false,
                reveal: [("pipe_day".to_string(), vec!["Send a plumber on <value> .".to_string()])].into(),
                answer: BTreeMap::new(),
            },
        );
        let book = PhraseBook::with_intents(intents);
        assert_eq!(
            book.extract("BuyTicket", "I need the movie to be Dune .", None),
            vec![("movie".to_string(), "Dune".to_string())]
        );
        assert_eq!(
            book.extract("FixPipe", "Send a plumber on Monday .", None),
            vec![("pipe_day".to_string(), "Monday".to_string())]
        );
        assert_eq!(
            book.extract("BuyTicket", "2 please .", Some("qty")),
            vec![("qty".to_string(), "2".to_string())]
        );
        assert!(book.extract("BuyTicket", "2 please .", None).is_empty());
        assert_eq!(book.reveal_options("FixPipe", "pipe_day", "Monday"), ["Send a plumber on Monday ."]);
        assert_eq!(book.reveal_options("BuyTicket", "movie", "Dune")[0], "I need the movie to be Dune .");
        assert_eq!(book.asked_slot("Which qty do you want ?"), Some("qty"));
    }
}
