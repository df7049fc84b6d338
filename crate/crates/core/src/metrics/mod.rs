//! Offline and online metrics over episodes.

mod bleu;
mod jga;
mod offline;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::dialogue::{serialize_call, Episode, Speaker};

pub use bleu::{bleu4, SMOOTHING_EPSILON};
pub use jga::{gold_round_calls, jga_counts, joint_goal_accuracy};
pub use offline::{teacher_forced, OfflineError, OfflineScores};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no input to score")]
    EmptyInput,
    #[error("hypotheses not aligned with gold: expected {expected}, got {got}")]
    Alignment { expected: usize, got: usize },
    #[error("error reduction is undefined for a perfect baseline")]
    DegenerateBase,
    #[error("not a decimal fraction: {0:?}")]
    BadDecimal(String),
}

/// Mean of `Episode::success`.
pub fn task_success_rate(episodes: &[Episode]) -> Result<f64, MetricError> {
    if episodes.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let ok = episodes.iter().filter(|e| e.success).count();
    Ok(ok as f64 / episodes.len() as f64)
}

/// Success rate per goal intent.
pub fn tsr_by_intent(episodes: &[Episode]) -> Result<BTreeMap<String, f64>, MetricError> {
    if episodes.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ep in episodes {
        let c = counts.entry(ep.goal.intent().to_string()).or_default();
        c.0 += usize::from(ep.success);
        c.1 += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, (ok, n))| (k, ok as f64 / n as f64))
        .collect())
}

/// Mean number of call turns per episode.
pub fn calls_per_dialogue(episodes: &[Episode]) -> Result<f64, MetricError> {
    if episodes.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let calls: usize = episodes.iter().map(Episode::n_calls).sum();
    Ok(calls as f64 / episodes.len() as f64)
}

/// Fraction of pairs whose token sequences are identical.
pub fn token_exact_match(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, MetricError> {
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricError::Alignment {
            expected: references.len(),
            got: hypotheses.len(),
        });
    }
    let same = hypotheses.iter().zip(references).filter(|(h, r)| h == r).count();
    Ok(same as f64 / hypotheses.len() as f64)
}

/// Whitespace tokenization used by BLEU and TEM.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(String::from).collect()
}

/// Share of the remaining error removed: `(new - base) / (1 - base)`.
pub fn error_reduction(base: f64, new: f64) -> Result<f64, MetricError> {
    if base >= 1.0 {
        return Err(MetricError::DegenerateBase);
    }
    Ok((new - base) / (1.0 - base))
}

/// [`error_reduction`] in exact rational arithmetic.
pub fn error_reduction_exact(base: Ratio<i64>, new: Ratio<i64>) -> Result<Ratio<i64>, MetricError> {
    let one = Ratio::from_integer(1);
    if base >= one {
        return Err(MetricError::DegenerateBase);
    }
    Ok((new - base) / (one - base))
}

/// Parses a plain decimal such as `0.777` into an exact fraction.
pub fn decimal_ratio(text: &str) -> Result<Ratio<i64>, MetricError> {
    let bad = || MetricError::BadDecimal(text.to_string());
    let t = text.trim();
    let (neg, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 15 {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: i64 = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let r = Ratio::new(digits, 10i64.pow(frac.len() as u32));
    Ok(if neg { -r } else { r })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaRow {
    pub tsr: f64,
    pub jga: Option<f64>,
    /// Distinct goals of this intent.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tsr: f64,
    pub jga: Option<f64>,
    pub bleu4: Option<f64>,
    pub tem: Option<f64>,
    pub per_schema: BTreeMap<String, SchemaRow>,
    pub calls_per_dialogue: f64,
    pub n_goals: usize,
    pub n_episodes: usize,
    pub n_turns: usize,
}

impl MetricReport {
    /// Online metrics of a rollout batch. Offline fields start empty.
    pub fn from_episodes(episodes: &[Episode]) -> Result<Self, MetricError> {
        let tsr = task_success_rate(episodes)?;
        let by_intent = tsr_by_intent(episodes)?;
        let mut goals: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for ep in episodes {
            goals.entry(ep.goal.intent()).or_default().insert(serialize_call(&ep.goal.canonical()));
        }
        let per_schema: BTreeMap<String, SchemaRow> = by_intent
            .into_iter()
            .map(|(intent, tsr)| {
                let n = goals.get(intent.as_str()).map_or(0, BTreeSet::len);
                (intent, SchemaRow { tsr, jga: None, n })
            })
            .collect();
        Ok(Self {
            tsr,
            jga: None,
            bleu4: None,
            tem: None,
            n_goals: per_schema.values().map(|r| r.n).sum(),
            per_schema,
            calls_per_dialogue: calls_per_dialogue(episodes)?,
            n_episodes: episodes.len(),
            n_turns: episodes.iter().map(|e| e.turns.len()).sum(),
        })
    }

    /// Fixed-order plain-text rendering.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut out = String::new();
        let _ = writeln!(out, "tsr                 {:.3}", self.tsr);
        let _ = writeln!(out, "jga                 {}", opt(self.jga));
        let _ = writeln!(out, "bleu4               {}", opt(self.bleu4));
        let _ = writeln!(out, "tem                 {}", opt(self.tem));
        let _ = writeln!(out, "calls_per_dialogue  {:.3}", self.calls_per_dialogue);
        let _ = writeln!(out, "n_goals             {}", self.n_goals);
        let _ = writeln!(out, "n_episodes          {}", self.n_episodes);
        let _ = writeln!(out, "n_turns             {}", self.n_turns);
        for (intent, row) in &self.per_schema {
            let _ = writeln!(out, "  {intent:<24} tsr {:.3}  jga {}  n {}", row.tsr, opt(row.jga), row.n);
        }
        out
    }
}

/// Gold Assistant utterances of `episodes` in order, skipping rounds where the
/// Assistant never spoke.
pub fn assistant_utterances(episodes: &[Episode]) -> Vec<&str> {
    episodes
        .iter()
        .flat_map(|ep| ep.turns.iter())
        .filter(|t| t.speaker == Speaker::AssistantUtt)
        .map(|t| t.text.as_str())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_reduction_arithmetic() {
        let r = error_reduction_exact(decimal_ratio("0.777").unwrap(), decimal_ratio("0.860").unwrap()).unwrap();
        assert_eq!(r, Ratio::new(83, 223));
        let r = error_reduction_exact(decimal_ratio(".973").unwrap(), decimal_ratio(".977").unwrap()).unwrap();
        assert_eq!(r, Ratio::new(4, 27));
        assert_eq!(error_reduction(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(error_reduction(1.0, 1.0), Err(MetricError::DegenerateBase));
        assert!(decimal_ratio("1e3").is_err());
    }

    #[test]
    fn tem_counts_pairs() {
        let t = |s: &str| tokenize(s);
        let h = vec![t("a b"), t("c"), t("d e"), t("f")];
        let r = vec![t("a b"), t("c"), t("d e"), t("g")];
        assert_eq!(token_exact_match(&h, &r).unwrap(), 0.75);
    }
}
