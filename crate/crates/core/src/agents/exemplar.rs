//! Retrieval-based agent that learns from episodes.
//!
//! Training turns every agent turn into an entry `(role, state, context) ->
//! response`. The state is a short list of `#markers` describing where the
//! dialogue stands (first turn, after an API success, all slots stated, ...);
//! the context is the token multiset of the other party's last turn. Responses
//! are delexicalized: slot values become `<value>`, slot names `<slot>`, and a
//! whole API call becomes `<apicall>`.
//!
//! At inference time entries with the same state are scored by multiset
//! Jaccard overlap with the current context. Among responses that can be
//! filled in, the best-scoring tier is kept and weighted by training counts;
//! greedy decoding takes the heaviest, nucleus decoding samples.
//!
//! The Assistant side also learns clause templates for reading slot values out
//! of User turns, and an intent lexicon (token -> intent counts) used when no
//! schema is given.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::nucleus::pick;
use super::phrasebook::{clauses, Pattern, CLAUSE_JOIN, SLOT, VALUE};
use super::scripted::after_success;
use super::{tokens, Agent, AgentError, Observation, Role};
use crate::dialogue::{
    calls_equal, parse_call, parse_response, ApiCall, Episode, Speaker, Turn, DONE,
};

pub const APICALL_SLOT: &str = "<apicall>";
const ASKED: &str = "<asked>";
const BOUND_OPEN: &str = "<value:";

/// A token contributes to intent inference only when at least this share of
/// its occurrences came with one intent.
const INFORMATIVE_SHARE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub role: Role,
    pub state: String,
    pub context: BTreeMap<String, u32>,
    pub response: String,
    pub weight: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    /// Mentions the slot name: `I need the <slot> to be <value> .`
    Generic,
    /// Bare value answering a question about a slot.
    Answer,
    /// Slot-specific phrasing carrying only the value.
    Bound,
}

#[derive(Debug)]
struct Template {
    kind: Kind,
    slot: String,
    pattern: Pattern,
    weight: u64,
}

#[derive(Debug, Default)]
struct Cache {
    flat: Vec<Entry>,
    by_state: BTreeMap<(Role, String), Vec<usize>>,
    by_phase: BTreeMap<(Role, String), Vec<usize>>,
    by_role: BTreeMap<Role, Vec<usize>>,
    templates: Vec<Template>,
    asks: Vec<Pattern>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ExemplarStore {
    pub schema_aware: bool,
    entries: BTreeMap<String, Entry>,
    lexicon: BTreeMap<String, BTreeMap<String, u64>>,
    intent_slots: BTreeMap<String, BTreeSet<String>>,
    /// `kind \t slot \t template` -> count.
    templates: BTreeMap<String, u64>,
    asks: BTreeMap<String, u64>,
    /// Episode id -> how many copies have been absorbed.
    absorbed: BTreeMap<String, u64>,
    #[serde(skip)]
    cache: OnceLock<Cache>,
}

impl Clone for ExemplarStore {
    fn clone(&self) -> Self {
        Self {
            schema_aware: self.schema_aware,
            entries: self.entries.clone(),
            lexicon: self.lexicon.clone(),
            intent_slots: self.intent_slots.clone(),
            templates: self.templates.clone(),
            asks: self.asks.clone(),
            absorbed: self.absorbed.clone(),
            cache: OnceLock::new(),
        }
    }
}

impl PartialEq for ExemplarStore {
    fn eq(&self, other: &Self) -> bool {
        self.schema_aware == other.schema_aware
            && self.entries == other.entries
            && self.lexicon == other.lexicon
            && self.intent_slots == other.intent_slots
            && self.templates == other.templates
            && self.asks == other.asks
            && self.absorbed == other.absorbed
    }
}

/// Byte range of `needle` in `hay` delimited by spaces or the string ends.
fn find_word(hay: &str, needle: &str) -> Option<(usize, usize)> {
    let needle = needle.trim();
    if needle.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(off) = hay[from..].find(needle) {
        let start = from + off;
        let end = start + needle.len();
        let left = start == 0 || hay.as_bytes()[start - 1] == b' ';
        let right = end == hay.len() || hay.as_bytes()[end] == b' ';
        if left && right {
            return Some((start, end));
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    None
}

fn splice(text: &str, range: (usize, usize), with: &str) -> String {
    format!("{}{}{}", &text[..range.0], with, &text[range.1..])
}

fn is_punct(tok: &str) -> bool {
    tok.chars().all(|c| c.is_ascii_punctuation())
}

fn multiset<'a>(items: impl Iterator<Item = &'a str>) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    for t in items {
        *out.entry(t.to_string()).or_insert(0) += 1;
    }
    out
}

fn jaccard(a: &BTreeMap<String, u32>, b: &BTreeMap<String, u32>) -> f64 {
    let mut inter = 0u32;
    let mut union = 0u32;
    let mut ia = a.iter().peekable();
    let mut ib = b.iter().peekable();
    loop {
        match (ia.peek(), ib.peek()) {
            (Some((ka, va)), Some((kb, vb))) => match ka.cmp(kb) {
                std::cmp::Ordering::Less => {
                    union += **va;
                    ia.next();
                }
                std::cmp::Ordering::Greater => {
                    union += **vb;
                    ib.next();
                }
                std::cmp::Ordering::Equal => {
                    inter += (**va).min(**vb);
                    union += (**va).max(**vb);
                    ia.next();
                    ib.next();
                }
            },
            (Some((_, va)), None) => {
                union += **va;
                ia.next();
            }
            (None, Some((_, vb))) => {
                union += **vb;
                ib.next();
            }
            (None, None) => break,
        }
    }
    if union == 0 {
        1.0
    } else {
        f64::from(inter) / f64::from(union)
    }
}

/// Delexicalizes one User clause against the goal. Returns the template kind,
/// the slot, and the clause with the value (and slot name) replaced.
fn delex_clause(clause: &str, goal: &ApiCall, asked: Option<&str>) -> Option<(Kind, String, String)> {
    let mut slots: Vec<(&String, &String)> = goal.slots().iter().collect();
    slots.sort_by_key(|(_, v)| std::cmp::Reverse(v.trim().len()));
    let (slot, range) = slots
        .iter()
        .find_map(|(s, v)| find_word(clause, v).map(|r| (s.as_str(), r)))?;
    let with_value = splice(clause, range, VALUE);
    if let Some(r) = find_word(&with_value, slot) {
        return Some((Kind::Generic, slot.to_string(), splice(&with_value, r, SLOT)));
    }
    let kind = if asked == Some(slot) { Kind::Answer } else { Kind::Bound };
    Some((kind, slot.to_string(), with_value))
}

fn template_key(kind: Kind, slot: &str, template: &str) -> String {
    match kind {
        Kind::Generic => format!("G\t\t{template}"),
        Kind::Answer => format!("A\t\t{template}"),
        Kind::Bound => format!("B\t{slot}\t{template}"),
    }
}

/// Slots whose value occurs in any of the given turns.
fn mentioned<'a>(goal: &'a ApiCall, texts: &[&str]) -> BTreeSet<&'a str> {
    goal.slots()
        .iter()
        .filter(|(_, v)| texts.iter().any(|t| find_word(t, v).is_some()))
        .map(|(s, _)| s.as_str())
        .collect()
}

fn ask_slot<'a>(text: &'a str, asks: &[Pattern], known: &BTreeSet<String>) -> Option<&'a str> {
    asks.iter()
        .find_map(|p| p.slot_only(text))
        .or_else(|| tokens(text).find(|t| known.contains(*t)))
}

fn state(markers: &[&str]) -> String {
    markers.join(" ")
}

fn phase(state: &str) -> String {
    state.split(' ').next().unwrap_or_default().to_string()
}

impl ExemplarStore {
    pub fn new(schema_aware: bool) -> Self {
        Self {
            schema_aware,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &Entry> {
        self.entries.values()
    }

    pub fn intent_lexicon(&self) -> &BTreeMap<String, BTreeMap<String, u64>> {
        &self.lexicon
    }

    pub fn known_intents(&self) -> impl Iterator<Item = &str> {
        self.intent_slots.keys().map(String::as_str)
    }

    fn cache(&self) -> &Cache {
        self.cache.get_or_init(|| {
            let mut cache = Cache::default();
            for e in self.entries.values() {
                let i = cache.flat.len();
                cache.by_state.entry((e.role, e.state.clone())).or_default().push(i);
                cache.by_phase.entry((e.role, phase(&e.state))).or_default().push(i);
                cache.by_role.entry(e.role).or_default().push(i);
                cache.flat.push(e.clone());
            }
            let mut templates: Vec<Template> = self
                .templates
                .iter()
                .filter_map(|(key, &weight)| {
                    let mut parts = key.splitn(3, '\t');
                    let kind = match parts.next()? {
                        "G" => Kind::Generic,
                        "A" => Kind::Answer,
                        _ => Kind::Bound,
                    };
                    let slot = parts.next()?.to_string();
                    let pattern = Pattern::compile(parts.next()?);
                    Some(Template {
                        kind,
                        slot,
                        pattern,
                        weight,
                    })
                })
                .collect();
            // Heaviest first; the sort is stable so ties keep key order.
            templates.sort_by(|a, b| b.weight.cmp(&a.weight));
            cache.templates = templates;
            let mut asks: Vec<(&String, &u64)> = self.asks.iter().collect();
            asks.sort_by(|a, b| b.1.cmp(a.1));
            cache.asks = asks.into_iter().map(|(t, _)| Pattern::compile(t)).collect();
            cache
        })
    }

    fn add_entry(&mut self, role: Role, state: String, context: BTreeMap<String, u32>, response: String, n: u64) {
        let ctx: Vec<String> = context.iter().map(|(k, v)| format!("{k}*{v}")).collect();
        let key = format!("{role}|{state}|{}|{response}", ctx.join(" "));
        self.entries
            .entry(key)
            .and_modify(|e| e.weight += n)
            .or_insert(Entry {
                role,
                state,
                context,
                response,
                weight: n,
            });
    }

    /// Adds every turn of `role` in `episodes`. Repeated training on the same
    /// data keeps the keys and adds to the weights.
    pub fn train(&mut self, episodes: &[Episode], role: Role) {
        for ep in episodes {
            self.train_one(ep, role, 1);
        }
        self.cache = OnceLock::new();
    }

    /// Incremental training on an accumulated corpus: each distinct episode
    /// contributes as many copies as it has in `episodes`, counting copies the
    /// store has already absorbed. Trains both roles.
    pub fn absorb(&mut self, episodes: &[Episode]) -> usize {
        let mut counts: BTreeMap<String, (u64, &Episode)> = BTreeMap::new();
        for ep in episodes {
            counts.entry(ep.id()).or_insert((0, ep)).0 += 1;
        }
        let mut added = 0;
        for (id, (n, ep)) in counts {
            let seen = self.absorbed.get(&id).copied().unwrap_or(0);
            if n > seen {
                self.train_one(ep, Role::User, n - seen);
                self.train_one(ep, Role::Assistant, n - seen);
                self.absorbed.insert(id, n);
                added += 1;
            }
        }
        self.cache = OnceLock::new();
        added
    }

    fn train_one(&mut self, ep: &Episode, role: Role, n: u64) {
        let goal = &ep.goal;
        let slot_names: BTreeSet<String> = goal.slots().keys().cloned().collect();
        self.learn_language(ep, &slot_names, n);
        match role {
            Role::Assistant => {
                self.learn_lexicon(ep, n);
                self.learn_assistant(ep, &slot_names, n);
            }
            Role::User => self.learn_user(ep, &slot_names, n),
        }
    }

    fn learn_language(&mut self, ep: &Episode, slot_names: &BTreeSet<String>, n: u64) {
        let mut asked: Option<String> = None;
        for turn in &ep.turns {
            match turn.speaker {
                Speaker::AssistantUtt => {
                    asked = tokens(&turn.text).find(|t| slot_names.contains(*t)).map(str::to_string);
                    if let Some(slot) = &asked {
                        if let Some(r) = find_word(&turn.text, slot) {
                            *self.asks.entry(splice(&turn.text, r, SLOT)).or_insert(0) += n;
                        }
                    }
                }
                Speaker::User if !turn.is_done() => {
                    for clause in clauses(&turn.text) {
                        if let Some((kind, slot, t)) = delex_clause(clause, &ep.goal, asked.as_deref()) {
                            *self.templates.entry(template_key(kind, &slot, &t)).or_insert(0) += n;
                        }
                    }
                    asked = None;
                }
                _ => {}
            }
        }
    }

    fn learn_lexicon(&mut self, ep: &Episode, n: u64) {
        let Some(first_call) = ep.turns.iter().position(|t| t.speaker == Speaker::AssistantCall) else {
            return;
        };
        let Ok(call) = parse_call(&ep.turns[first_call].text) else {
            return;
        };
        self.intent_slots
            .entry(call.intent().to_string())
            .or_default()
            .extend(call.slots().keys().cloned());
        let words: BTreeSet<&str> = ep.turns[..first_call]
            .iter()
            .filter(|t| t.speaker == Speaker::User)
            .flat_map(|t| tokens(&t.text))
            .filter(|w| !is_punct(w))
            .collect();
        for w in words {
            *self
                .lexicon
                .entry(w.to_string())
                .or_default()
                .entry(call.intent().to_string())
                .or_insert(0) += n;
        }
    }

    fn learn_assistant(&mut self, ep: &Episode, slot_names: &BTreeSet<String>, n: u64) {
        let turns = &ep.turns;
        let mut user_texts: Vec<&str> = Vec::new();
        let mut called = false;
        for (i, turn) in turns.iter().enumerate() {
            match turn.speaker {
                Speaker::User => user_texts.push(&turn.text),
                Speaker::AssistantCall | Speaker::AssistantUtt if i > 0 => {
                    let prev = &turns[i - 1];
                    let after_api = prev.speaker == Speaker::ApiResp;
                    let markers = if after_api {
                        let ok = parse_response(&prev.text).is_ok_and(|r| !r.is_failure());
                        vec![if ok { "#after_ok" } else { "#after_fail" }]
                    } else {
                        let complete = mentioned(&ep.goal, &user_texts).len() == slot_names.len();
                        let mut m = vec!["#after_user", if complete { "#complete" } else { "#missing" }];
                        if called {
                            m.push("#called");
                        }
                        m
                    };
                    let last_user = user_texts.last().copied().unwrap_or_default();
                    let context = multiset(markers.iter().copied().chain(tokens(last_user)));
                    let response = if turn.speaker == Speaker::AssistantCall {
                        if parse_call(&turn.text).is_ok_and(|c| calls_equal(&c, &ep.goal)) {
                            called = true;
                        }
                        APICALL_SLOT.to_string()
                    } else {
                        match tokens(&turn.text).find(|t| slot_names.contains(*t)) {
                            Some(slot) => {
                                let r = find_word(&turn.text, slot).expect("token was found");
                                splice(&turn.text, r, SLOT)
                            }
                            None => turn.text.clone(),
                        }
                    };
                    self.add_entry(Role::Assistant, state(&markers), context, response, n);
                }
                _ => {}
            }
        }
    }

    fn learn_user(&mut self, ep: &Episode, slot_names: &BTreeSet<String>, n: u64) {
        let turns = &ep.turns;
        let mut own: Vec<&str> = Vec::new();
        for (i, turn) in turns.iter().enumerate() {
            if turn.speaker != Speaker::User {
                continue;
            }
            let history = &turns[..i];
            let last_asst = history.last().filter(|t| t.speaker == Speaker::AssistantUtt);
            let asked = last_asst.and_then(|t| tokens(&t.text).find(|w| slot_names.contains(*w)));
            let markers = self.user_markers(history, asked.is_some(), mentioned(&ep.goal, &own).len() == slot_names.len());
            let context = multiset(
                markers
                    .iter()
                    .copied()
                    .chain(last_asst.map(|t| tokens(&t.text)).into_iter().flatten()),
            );
            let response = if turn.is_done() {
                DONE.to_string()
            } else {
                let parts: Vec<String> = clauses(&turn.text)
                    .map(|clause| match delex_clause(clause, &ep.goal, asked) {
                        Some((Kind::Generic, _, t)) => t,
                        Some((Kind::Answer, _, t)) => t.replace(VALUE, ASKED),
                        Some((Kind::Bound, slot, t)) => t.replace(VALUE, &format!("{BOUND_OPEN}{slot}>")),
                        None => clause.to_string(),
                    })
                    .collect();
                parts.join(CLAUSE_JOIN)
            };
            self.add_entry(Role::User, state(&markers), context, response, n);
            own.push(&turn.text);
        }
    }

    fn user_markers(&self, history: &[Turn], asked: bool, all_stated: bool) -> Vec<&'static str> {
        if history.is_empty() {
            return vec!["#first"];
        }
        if after_success(history) {
            return vec!["#after_ok"];
        }
        vec![
            if asked { "#asked" } else { "#other" },
            if all_stated { "#all_stated" } else { "#pending" },
        ]
    }

    /// Intent whose informative tokens best cover the User turns so far.
    pub fn infer_intent(&self, history: &[Turn]) -> Option<String> {
        let words: BTreeSet<&str> = history
            .iter()
            .filter(|t| t.speaker == Speaker::User)
            .flat_map(|t| tokens(&t.text))
            .collect();
        let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
        for w in words {
            let Some(by_intent) = self.lexicon.get(w) else { continue };
            let total: u64 = by_intent.values().sum();
            for (intent, c) in by_intent {
                let share = *c as f64 / total as f64;
                if share >= INFORMATIVE_SHARE {
                    *scores.entry(intent.as_str()).or_insert(0.0) += share;
                }
            }
        }
        let mut best: Option<(&str, f64)> = None;
        for (intent, s) in scores {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((intent, s));
            }
        }
        best.map(|(i, _)| i.to_string())
    }

    /// Slot values read from the User turns with the learned templates.
    pub fn read_values(&self, history: &[Turn], slots: Option<&BTreeSet<String>>) -> BTreeMap<String, String> {
        let cache = self.cache();
        let empty = BTreeSet::new();
        let known = slots.unwrap_or(&empty);
        let mut values = BTreeMap::new();
        let mut asked: Option<&str> = None;
        for turn in history {
            match turn.speaker {
                Speaker::AssistantUtt => asked = ask_slot(&turn.text, &cache.asks, known),
                Speaker::User => {
                    for clause in clauses(&turn.text) {
                        let accept = |s: &str| slots.is_none_or(|k| k.contains(s));
                        let found = cache.templates.iter().find_map(|t| {
                            let (slot, value) = t.pattern.captures(clause)?;
                            let slot = match t.kind {
                                Kind::Generic => slot?,
                                Kind::Bound => t.slot.as_str(),
                                Kind::Answer => asked?,
                            };
                            accept(slot).then(|| (slot.to_string(), value.trim().to_string()))
                        });
                        if let Some((slot, value)) = found {
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

    /// Ranks candidate responses for `state` and `context`, keeping only the
    /// ones `fillable` accepts. Returns (response, weight) in response order.
    fn candidates(
        &self,
        role: Role,
        state: &str,
        context: &BTreeMap<String, u32>,
        fillable: impl Fn(&str) -> bool,
    ) -> Vec<(String, f64)> {
        let cache = self.cache();
        let tiers = [
            cache.by_state.get(&(role, state.to_string())),
            cache.by_phase.get(&(role, phase(state))),
            cache.by_role.get(&role),
        ];
        for ids in tiers.into_iter().flatten() {
            let mut best = f64::NEG_INFINITY;
            let mut grouped: BTreeMap<&str, u64> = BTreeMap::new();
            for &i in ids {
                let e = &cache.flat[i];
                if !fillable(&e.response) {
                    continue;
                }
                let score = jaccard(&e.context, context);
                if score > best {
                    best = score;
                    grouped.clear();
                }
                if score == best {
                    *grouped.entry(e.response.as_str()).or_insert(0) += e.weight;
                }
            }
            if !grouped.is_empty() {
                return grouped.into_iter().map(|(r, w)| (r.to_string(), w as f64)).collect();
            }
        }
        Vec::new()
    }
}

fn choose(options: &[(String, f64)], obs: &Observation) -> Option<String> {
    let weights: Vec<f64> = options.iter().map(|(_, w)| *w).collect();
    let mut rng = obs.rng();
    pick(&weights, &obs.decode, &mut rng).map(|i| options[i].0.clone())
}

/// Agent view over a frozen store. One store serves both roles.
#[derive(Debug, Clone)]
pub struct ExemplarAgent {
    store: std::sync::Arc<ExemplarStore>,
}

impl ExemplarAgent {
    pub fn new(store: std::sync::Arc<ExemplarStore>) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &ExemplarStore {
        &self.store
    }

    fn assistant(&self, obs: &Observation) -> Result<String, AgentError> {
        let store = &*self.store;
        let history = &obs.history;
        let (intent, slots) = match obs.schema()? {
            Some(schema) => (Some(schema.intent().to_string()), Some(schema.slot_names().clone())),
            None => match store.infer_intent(history) {
                Some(intent) => {
                    let slots = store.intent_slots.get(&intent).cloned().unwrap_or_default();
                    (Some(intent), Some(slots))
                }
                None => (None, None),
            },
        };
        let values = store.read_values(history, slots.as_ref());
        let missing: Option<String> = slots
            .as_ref()
            .and_then(|s| s.iter().find(|n| !values.contains_key(*n)).cloned());
        let call = match (&intent, &slots) {
            (Some(intent), Some(_)) if missing.is_none() => ApiCall::new(intent.as_str(), values.clone()).ok(),
            _ => None,
        };
        let markers: Vec<&str> = match history.last() {
            Some(t) if t.speaker == Speaker::ApiResp => {
                let ok = parse_response(&t.text).is_ok_and(|r| !r.is_failure());
                vec![if ok { "#after_ok" } else { "#after_fail" }]
            }
            _ => {
                let mut m = vec!["#after_user", if call.is_some() { "#complete" } else { "#missing" }];
                let repeated = call.as_ref().is_some_and(|c| {
                    history
                        .iter()
                        .filter(|t| t.speaker == Speaker::AssistantCall)
                        .any(|t| parse_call(&t.text).is_ok_and(|p| calls_equal(&p, c)))
                });
                if repeated {
                    m.push("#called");
                }
                m
            }
        };
        let last_user = history
            .iter()
            .rev()
            .find(|t| t.speaker == Speaker::User)
            .map(|t| t.text.as_str())
            .unwrap_or_default();
        let context = multiset(markers.iter().copied().chain(tokens(last_user)));
        let fillable = |r: &str| {
            if r == APICALL_SLOT {
                call.is_some()
            } else if r.contains(SLOT) {
                missing.is_some()
            } else {
                true
            }
        };
        let options = store.candidates(Role::Assistant, &state(&markers), &context, fillable);
        let Some(response) = choose(&options, obs) else {
            return Ok(String::new());
        };
        Ok(if response == APICALL_SLOT {
            call.expect("fillable checked the call").to_string()
        } else if let Some(slot) = &missing {
            response.replace(SLOT, slot)
        } else {
            response
        })
    }

    fn user(&self, obs: &Observation) -> Result<String, AgentError> {
        let store = &*self.store;
        let goal = obs.goal()?;
        let history = &obs.history;
        let slot_names: BTreeSet<String> = goal.slots().keys().cloned().collect();
        let cache = store.cache();
        let last_asst = history.last().filter(|t| t.speaker == Speaker::AssistantUtt);
        let asked = last_asst.and_then(|t| ask_slot(&t.text, &cache.asks, &slot_names));
        let own: Vec<&str> = history
            .iter()
            .filter(|t| t.speaker == Speaker::User)
            .map(|t| t.text.as_str())
            .collect();
        let stated = mentioned(&goal, &own);
        let pending: Vec<&str> = goal
            .slots()
            .keys()
            .map(String::as_str)
            .filter(|s| !stated.contains(s))
            .collect();
        let markers = store.user_markers(history, asked.is_some(), pending.is_empty());
        let context = multiset(
            markers
                .iter()
                .copied()
                .chain(last_asst.map(|t| tokens(&t.text)).into_iter().flatten()),
        );
        let fillable = |r: &str| {
            clauses(r).all(|c| {
                if c.contains(ASKED) {
                    asked.is_some()
                } else if let Some(start) = c.find(BOUND_OPEN) {
                    let rest = &c[start + BOUND_OPEN.len()..];
                    rest.split('>').next().is_some_and(|s| goal.get(s).is_some())
                } else {
                    true
                }
            })
        };
        let options = store.candidates(Role::User, &state(&markers), &context, fillable);
        let Some(response) = choose(&options, obs) else {
            return Ok(String::new());
        };
        let all: Vec<&str> = goal.slots().keys().map(String::as_str).collect();
        let mut queue = pending.clone().into_iter();
        let parts: Vec<String> = clauses(&response)
            .map(|c| {
                if c.contains(ASKED) {
                    let slot = asked.unwrap_or_default();
                    c.replace(ASKED, goal.get(slot).unwrap_or_default())
                } else if let Some(start) = c.find(BOUND_OPEN) {
                    let rest = &c[start + BOUND_OPEN.len()..];
                    let slot = rest.split('>').next().unwrap_or_default();
                    let marker = format!("{BOUND_OPEN}{slot}>");
                    c.replace(&marker, goal.get(slot).unwrap_or_default())
                } else if c.contains(SLOT) && !all.is_empty() {
                    let slot = queue.next().unwrap_or(all[own.len() % all.len()]);
                    c.replace(SLOT, slot).replace(VALUE, goal.get(slot).unwrap_or_default())
                } else {
                    c.to_string()
                }
            })
            .collect();
        Ok(parts.join(CLAUSE_JOIN))
    }
}

impl Agent for ExemplarAgent {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        match obs.role {
            Role::Assistant => self.assistant(obs),
            Role::User => self.user(obs),
        }
    }
}
