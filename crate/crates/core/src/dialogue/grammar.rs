//! Canonical string forms for API calls, schemas and API responses.
//!
//! ```text
//! APICALL: api_name = BuyTicket ; movie = Dune ; qty = 2
//! SCHEMA: api_name = BuyTicket ; slots = movie,qty
//! APIRESP: movie = Dune ; qty = 2
//! APIRESP: API_FAIL
//! ```
//!
//! Slots are always emitted in lexicographic order. Inside values `;` and `\`
//! are escaped as `\;` and `\\`. Parsing tolerates arbitrary whitespace around
//! `;` and `=` and splits every clause on its first unescaped `=`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const CALL_PREFIX: &str = "APICALL:";
pub const SCHEMA_PREFIX: &str = "SCHEMA:";
pub const RESPONSE_PREFIX: &str = "APIRESP:";
pub const API_FAIL: &str = "API_FAIL";
pub const API_NAME: &str = "api_name";
const SLOTS_KEY: &str = "slots";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {position}: {reason}")]
pub struct ParseError {
    pub position: usize,
    pub reason: String,
}

impl ParseError {
    fn new(position: usize, reason: impl Into<String>) -> Self {
        Self {
            position,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidName {
    #[error("intent {0:?} must match [A-Za-z0-9_.-]+")]
    Intent(String),
    #[error("slot name {0:?} must match [A-Za-z0-9_.-]+")]
    Slot(String),
    #[error("slot name `api_name` is reserved")]
    Reserved,
}

/// True for non-empty strings over `[A-Za-z0-9_.-]`.
pub fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

/// A fully realized API call. Also used as the User's goal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ApiCall {
    intent: String,
    slots: BTreeMap<String, String>,
}

impl ApiCall {
    pub fn new<I, K, V>(intent: impl Into<String>, slots: I) -> Result<Self, InvalidName>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let intent = intent.into();
        if !is_token(&intent) {
            return Err(InvalidName::Intent(intent));
        }
        let mut map = BTreeMap::new();
        for (k, v) in slots {
            let k = k.into();
            if !is_token(&k) {
                return Err(InvalidName::Slot(k));
            }
            if k == API_NAME {
                return Err(InvalidName::Reserved);
            }
            map.insert(k, v.into());
        }
        Ok(Self { intent, slots: map })
    }

    pub fn intent(&self) -> &str {
        &self.intent
    }

    pub fn slots(&self) -> &BTreeMap<String, String> {
        &self.slots
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.slots.get(slot).map(String::as_str)
    }

    /// The signature of this call: intent and slot names, no values.
    pub fn schema(&self) -> ApiSchema {
        ApiSchema {
            intent: self.intent.clone(),
            slot_names: self.slots.keys().cloned().collect(),
        }
    }

    /// Copy with every value trimmed; the form used for canonical keys.
    pub fn canonical(&self) -> ApiCall {
        ApiCall {
            intent: self.intent.clone(),
            slots: self
                .slots
                .iter()
                .map(|(k, v)| (k.clone(), v.trim().to_string()))
                .collect(),
        }
    }
}

impl fmt::Display for ApiCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_call(self))
    }
}

impl FromStr for ApiCall {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_call(s)
    }
}

/// Intent plus slot names; never carries values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ApiSchema {
    intent: String,
    slot_names: BTreeSet<String>,
}

impl ApiSchema {
    pub fn new<I, S>(intent: impl Into<String>, slot_names: I) -> Result<Self, InvalidName>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let intent = intent.into();
        if !is_token(&intent) {
            return Err(InvalidName::Intent(intent));
        }
        let mut names = BTreeSet::new();
        for s in slot_names {
            let s = s.into();
            if !is_token(&s) {
                return Err(InvalidName::Slot(s));
            }
            if s == API_NAME {
                return Err(InvalidName::Reserved);
            }
            names.insert(s);
        }
        Ok(Self {
            intent,
            slot_names: names,
        })
    }

    pub fn intent(&self) -> &str {
        &self.intent
    }

    pub fn slot_names(&self) -> &BTreeSet<String> {
        &self.slot_names
    }
}

impl fmt::Display for ApiSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_schema(self))
    }
}

impl FromStr for ApiSchema {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_schema(s)
    }
}

/// What the API implementation returns: a payload, or the in-band failure sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ApiResponse {
    Payload(BTreeMap<String, String>),
    Failure,
}

impl ApiResponse {
    pub fn is_failure(&self) -> bool {
        matches!(self, ApiResponse::Failure)
    }
}

impl fmt::Display for ApiResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_response(self))
    }
}

impl FromStr for ApiResponse {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_response(s)
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(ApiCall);
string_serde!(ApiSchema);
string_serde!(ApiResponse);

fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        if c == '\\' || c == ';' {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn write_pairs<'a>(out: &mut String, pairs: impl Iterator<Item = (&'a String, &'a String)>) {
    for (k, v) in pairs {
        out.push_str(" ; ");
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&escape(v.trim()));
    }
}

pub fn serialize_call(call: &ApiCall) -> String {
    let mut out = format!("{CALL_PREFIX} {API_NAME} = {}", call.intent);
    write_pairs(&mut out, call.slots.iter());
    out
}

pub fn serialize_schema(schema: &ApiSchema) -> String {
    let mut out = format!("{SCHEMA_PREFIX} {API_NAME} = {}", schema.intent);
    if !schema.slot_names.is_empty() {
        let names: Vec<&str> = schema.slot_names.iter().map(String::as_str).collect();
        out.push_str(&format!(" ; {SLOTS_KEY} = {}", names.join(",")));
    }
    out
}

pub fn serialize_response(response: &ApiResponse) -> String {
    match response {
        ApiResponse::Failure => format!("{RESPONSE_PREFIX} {API_FAIL}"),
        ApiResponse::Payload(map) => {
            let mut out = RESPONSE_PREFIX.to_string();
            let mut first = true;
            for (k, v) in map {
                out.push_str(if first { " " } else { " ; " });
                first = false;
                out.push_str(k);
                out.push_str(" = ");
                out.push_str(&escape(v.trim()));
            }
            out
        }
    }
}

/// Two calls are equal when intents match exactly and slot maps match after
/// trimming surrounding whitespace of values. Comparison is case-sensitive.
pub fn calls_equal(a: &ApiCall, b: &ApiCall) -> bool {
    a.intent == b.intent
        && a.slots.len() == b.slots.len()
        && a
            .slots
            .iter()
            .zip(b.slots.iter())
            .all(|((ka, va), (kb, vb))| ka == kb && va.trim() == vb.trim())
}

/// One `key = value` clause, or a bare word when the clause has no `=`.
#[derive(Debug)]
struct Clause {
    start: usize,
    key: String,
    value: Option<String>,
}

fn unescape(raw: &str, offset: usize) -> Result<String, ParseError> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.char_indices();
    while let Some((i, c)) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some((_, next)) => out.push(next),
                None => return Err(ParseError::new(offset + i, "dangling escape")),
            }
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

/// Splits `body` on unescaped `;`, then each clause on its first unescaped `=`.
fn clauses(body: &str, offset: usize) -> Result<Vec<Clause>, ParseError> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let mut start = 0;
    let mut eq: Option<usize> = None;
    let mut i = 0;
    let mut finish = |start: usize, end: usize, eq: Option<usize>| -> Result<(), ParseError> {
        let text = &body[start..end];
        if text.trim().is_empty() {
            return Ok(());
        }
        let lead = text.len() - text.trim_start().len();
        let (key, value) = match eq {
            Some(e) => {
                let key = body[start..e].trim();
                let raw = body[e + 1..end].trim();
                let value_offset = offset + e + 1 + (body[e + 1..end].len() - body[e + 1..end].trim_start().len());
                (key.to_string(), Some(unescape(raw, value_offset)?))
            }
            None => (unescape(text.trim(), offset + start + lead)?, None),
        };
        out.push(Clause {
            start: offset + start + lead,
            key,
            value,
        });
        Ok(())
    };
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => {
                if i + 1 >= bytes.len() {
                    return Err(ParseError::new(offset + i, "dangling escape"));
                }
                i += 2;
                continue;
            }
            b'=' if eq.is_none() => eq = Some(i),
            b';' => {
                finish(start, i, eq)?;
                start = i + 1;
                eq = None;
            }
            _ => {}
        }
        i += 1;
    }
    finish(start, bytes.len(), eq)?;
    Ok(out)
}

fn strip_prefix<'a>(text: &'a str, prefix: &str) -> Result<(&'a str, usize), ParseError> {
    let lead = text.len() - text.trim_start().len();
    let rest = &text[lead..];
    match rest.strip_prefix(prefix) {
        Some(body) => Ok((body, lead + prefix.len())),
        None => Err(ParseError::new(lead, format!("missing `{prefix}` prefix"))),
    }
}

fn check_token(name: &str, position: usize, what: &str) -> Result<(), ParseError> {
    if is_token(name) {
        Ok(())
    } else {
        Err(ParseError::new(position, format!("invalid {what} {name:?}")))
    }
}

pub fn parse_call(text: &str) -> Result<ApiCall, ParseError> {
    let (body, offset) = strip_prefix(text, CALL_PREFIX)?;
    let mut intent: Option<String> = None;
    let mut slots = BTreeMap::new();
    for clause in clauses(body, offset)? {
        let Some(value) = clause.value else {
            return Err(ParseError::new(clause.start, "clause without `=`"));
        };
        if clause.key == API_NAME {
            if intent.is_some() {
                return Err(ParseError::new(clause.start, "duplicate api_name clause"));
            }
            check_token(&value, clause.start, "intent")?;
            intent = Some(value);
        } else {
            check_token(&clause.key, clause.start, "slot name")?;
            if slots.insert(clause.key.clone(), value).is_some() {
                return Err(ParseError::new(
                    clause.start,
                    format!("duplicate slot name {:?}", clause.key),
                ));
            }
        }
    }
    let intent = intent.ok_or_else(|| ParseError::new(offset, "missing api_name clause"))?;
    Ok(ApiCall { intent, slots })
}

pub fn parse_schema(text: &str) -> Result<ApiSchema, ParseError> {
    let (body, offset) = strip_prefix(text, SCHEMA_PREFIX)?;
    let mut intent: Option<String> = None;
    let mut names: Option<BTreeSet<String>> = None;
    for clause in clauses(body, offset)? {
        let Some(value) = clause.value else {
            return Err(ParseError::new(clause.start, "clause without `=`"));
        };
        match clause.key.as_str() {
            API_NAME => {
                if intent.is_some() {
                    return Err(ParseError::new(clause.start, "duplicate api_name clause"));
                }
                check_token(&value, clause.start, "intent")?;
                intent = Some(value);
            }
            SLOTS_KEY => {
                if names.is_some() {
                    return Err(ParseError::new(clause.start, "duplicate slots clause"));
                }
                let mut set = BTreeSet::new();
                for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    check_token(name, clause.start, "slot name")?;
                    if name == API_NAME || !set.insert(name.to_string()) {
                        return Err(ParseError::new(
                            clause.start,
                            format!("duplicate or reserved slot name {name:?}"),
                        ));
                    }
                }
                names = Some(set);
            }
            other => {
                return Err(ParseError::new(
                    clause.start,
                    format!("unexpected schema clause {other:?}"),
                ))
            }
        }
    }
    let intent = intent.ok_or_else(|| ParseError::new(offset, "missing api_name clause"))?;
    Ok(ApiSchema {
        intent,
        slot_names: names.unwrap_or_default(),
    })
}

pub fn parse_response(text: &str) -> Result<ApiResponse, ParseError> {
    let (body, offset) = strip_prefix(text, RESPONSE_PREFIX)?;
    let parsed = clauses(body, offset)?;
    if let [only] = parsed.as_slice() {
        if only.value.is_none() && only.key == API_FAIL {
            return Ok(ApiResponse::Failure);
        }
    }
    let mut map = BTreeMap::new();
    for clause in parsed {
        let Some(value) = clause.value else {
            return Err(ParseError::new(clause.start, "clause without `=`"));
        };
        check_token(&clause.key, clause.start, "slot name")?;
        if map.insert(clause.key.clone(), value).is_some() {
            return Err(ParseError::new(
                clause.start,
                format!("duplicate slot name {:?}", clause.key),
            ));
        }
    }
    Ok(ApiResponse::Payload(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(intent: &str, slots: &[(&str, &str)]) -> ApiCall {
        ApiCall::new(intent, slots.iter().copied()).unwrap()
    }

    #[test]
    fn serializes_calls_in_slot_order() {
        let c = call("BuyTicket", &[("qty", "2"), ("movie", "Dune")]);
        assert_eq!(
            serialize_call(&c),
            "APICALL: api_name = BuyTicket ; movie = Dune ; qty = 2"
        );
        assert_eq!(serialize_call(&call("X", &[])), "APICALL: api_name = X");
        assert_eq!(
            serialize_call(&call("Note", &[("body", "a;b")])),
            r"APICALL: api_name = Note ; body = a\;b"
        );
    }

    #[test]
    fn parses_loose_whitespace() {
        assert_eq!(parse_call("APICALL: api_name = X").unwrap(), call("X", &[]));
        let parsed = parse_call("APICALL: api_name=BuyTicket ;qty = 2; movie =Dune").unwrap();
        assert_eq!(parsed, call("BuyTicket", &[("movie", "Dune"), ("qty", "2")]));
        // canonical re-serialization
        assert_eq!(
            serialize_call(&parsed),
            "APICALL: api_name = BuyTicket ; movie = Dune ; qty = 2"
        );
    }

    #[test]
    fn first_equals_splits() {
        let parsed = parse_call("APICALL: api_name = Eq ; expr = a=b=c").unwrap();
        assert_eq!(parsed.get("expr"), Some("a=b=c"));
    }

    #[test]
    fn parse_errors() {
        let err = parse_call("APICALL: movie = Dune").unwrap_err();
        assert!(err.reason.contains("api_name"), "{err}");
        assert!(parse_call("api_name = X").unwrap_err().reason.contains("prefix"));
        let dup = parse_call("APICALL: api_name = X ; a = 1 ; a = 2").unwrap_err();
        assert!(dup.reason.contains("duplicate"));
        let dangling = parse_call("APICALL: api_name = X ; a = 1\\").unwrap_err();
        assert_eq!(dangling.reason, "dangling escape");
        assert_eq!(dangling.position, "APICALL: api_name = X ; a = 1".len());
    }

    #[test]
    fn equality_ignores_order_and_padding() {
        let a = call("BuyTicket", &[("qty", "2"), ("movie", "Dune")]);
        let b = call("BuyTicket", &[("movie", "Dune "), ("qty", "2")]);
        assert!(calls_equal(&a, &b));
        assert!(!calls_equal(
            &call("BuyTicket", &[("qty", "2")]),
            &call("BuyTicket", &[("qty", "3")])
        ));
        assert!(!calls_equal(
            &call("BuyTicket", &[("movie", "dune")]),
            &call("BuyTicket", &[("movie", "Dune")])
        ));
    }

    #[test]
    fn schema_and_response_forms() {
        let s = call("BuyTicket", &[("movie", "Dune"), ("qty", "2")]).schema();
        assert_eq!(serialize_schema(&s), "SCHEMA: api_name = BuyTicket ; slots = movie,qty");
        assert_eq!(parse_schema("SCHEMA: api_name = BuyTicket ; slots = qty, movie").unwrap(), s);
        assert_eq!(parse_response("APIRESP: API_FAIL").unwrap(), ApiResponse::Failure);
        assert_eq!(serialize_response(&ApiResponse::Failure), "APIRESP: API_FAIL");
        let payload = parse_response("APIRESP: ref = A1 ; status=ok").unwrap();
        assert_eq!(serialize_response(&payload), "APIRESP: ref = A1 ; status = ok");
        assert_eq!(
            parse_response("APIRESP:").unwrap(),
            ApiResponse::Payload(BTreeMap::new())
        );
    }

    #[test]
    fn rejects_bad_names() {
        assert!(ApiCall::new("Buy Ticket", Vec::<(String, String)>::new()).is_err());
        assert!(ApiCall::new("X", [("api_name", "y")]).is_err());
        assert!(ApiCall::new("X", [("a b", "y")]).is_err());
    }
}
