//! Targeted acquisition of human conversations for the schemas the current
//! model handles worst, plus the random few-shot baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_io::DataError;
use crate::dialogue::Episode;
use crate::metrics::MetricError;
use crate::seed;

pub const LEDGER_FILE: &str = "al_ledger.json";
pub const K_SCHEMAS: usize = 8;
pub const K_CONVS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaScore {
    pub intent: String,
    pub tsr: f64,
    pub n_goals: usize,
}

/// Rows sorted ascending by `(tsr, intent)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaScoreTable {
    pub rows: Vec<SchemaScore>,
}

impl SchemaScoreTable {
    pub fn intents(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.intent.as_str())
    }

    pub fn worst(&self, k: usize) -> Vec<String> {
        self.intents().take(k).map(str::to_string).collect()
    }
}

pub fn rank_schemas(episodes: &[Episode]) -> Result<SchemaScoreTable, MetricError> {
    if episodes.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut acc: BTreeMap<&str, (usize, usize, BTreeSet<String>)> = BTreeMap::new();
    for ep in episodes {
        let row = acc.entry(ep.goal.intent()).or_default();
        row.0 += usize::from(ep.success);
        row.1 += 1;
        row.2.insert(ep.goal.canonical().to_string());
    }
    let mut rows: Vec<SchemaScore> = acc
        .into_iter()
        .map(|(intent, (ok, n, goals))| SchemaScore {
            intent: intent.to_string(),
            tsr: ok as f64 / n as f64,
            n_goals: goals.len(),
        })
        .collect();
    rows.sort_by(|a, b| a.tsr.total_cmp(&b.tsr).then_with(|| a.intent.cmp(&b.intent)));
    Ok(SchemaScoreTable { rows })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsufficientPool {
    pub split: String,
    pub wanted: usize,
    pub got: usize,
}

impl fmt::Display for InsufficientPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "insufficient {} pool: wanted {} conversations, {} remain",
            self.split, self.wanted, self.got
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlBatch {
    pub schemas: Vec<String>,
    pub train_adds: Vec<Episode>,
    pub valid_adds: Vec<Episode>,
    pub warnings: Vec<InsufficientPool>,
}

/// Up to `k` episodes whose intent is in `intents`, round-robin over
/// `intents` in the given order, each intent's candidates in seeded random
/// order. Episodes whose id is in `taken` are skipped.
fn round_robin(
    pool: &[Episode],
    intents: &[String],
    taken: &BTreeSet<String>,
    k: usize,
    seed: u64,
    salt: u64,
) -> Vec<Episode> {
    let mut queues: Vec<Vec<&Episode>> = intents
        .iter()
        .map(|intent| {
            let mut seen = BTreeSet::new();
            let mut q: Vec<&Episode> = pool
                .iter()
                .filter(|e| e.goal.intent() == intent)
                .filter(|e| {
                    let id = e.id();
                    !taken.contains(&id) && seen.insert(id)
                })
                .collect();
            q.shuffle(&mut seed::rng(&[seed, salt, seed::str_hash(intent)]));
            q.reverse();
            q
        })
        .collect();
    let mut out = Vec::new();
    while out.len() < k {
        let mut progressed = false;
        for q in queues.iter_mut() {
            if out.len() == k {
                break;
            }
            if let Some(e) = q.pop() {
                out.push(e.clone());
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

/// Picks the `k_schemas` worst intents of `table` and `k_convs` train plus
/// `k_convs` valid conversations matching them, skipping ids in `taken`.
pub fn select_al_batch(
    table: &SchemaScoreTable,
    pool_train: &[Episode],
    pool_valid: &[Episode],
    taken: &BTreeSet<String>,
    k_schemas: usize,
    k_convs: usize,
    seed: u64,
) -> AlBatch {
    let schemas = table.worst(k_schemas);
    let train_adds = round_robin(pool_train, &schemas, taken, k_convs, seed, 1);
    let valid_adds = round_robin(pool_valid, &schemas, taken, k_convs, seed, 2);
    let mut warnings = Vec::new();
    for (split, got) in [("train", train_adds.len()), ("valid", valid_adds.len())] {
        if got < k_convs {
            log::warn!("{}", InsufficientPool { split: split.into(), wanted: k_convs, got });
            warnings.push(InsufficientPool {
                split: split.into(),
                wanted: k_convs,
                got,
            });
        }
    }
    AlBatch {
        schemas,
        train_adds,
        valid_adds,
        warnings,
    }
}

/// Seeded uniform sample of `min(n, pool.len())` episodes without
/// replacement, in pool order.
pub fn select_random_fewshot(pool: &[Episode], n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = seed::rng(&[seed, 3]);
    let mut idx = rand::seq::index::sample(&mut rng, pool.len(), n.min(pool.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: usize,
    pub seed: u64,
    pub policy: String,
    pub schemas: Vec<String>,
    pub train_ids: Vec<String>,
    pub valid_ids: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Every injection made so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlLedger {
    pub entries: Vec<LedgerEntry>,
}

impl AlLedger {
    pub fn taken(&self) -> BTreeSet<String> {
        self.entries
            .iter()
            .flat_map(|e| e.train_ids.iter().chain(&e.valid_ids).cloned())
            .collect()
    }

    pub fn n_train(&self) -> usize {
        self.entries.iter().map(|e| e.train_ids.len()).sum()
    }

    pub fn record(&mut self, iteration: usize, seed: u64, policy: &str, batch: &AlBatch) {
        self.entries.push(LedgerEntry {
            iteration,
            seed,
            policy: policy.to_string(),
            schemas: batch.schemas.clone(),
            train_ids: batch.train_adds.iter().map(Episode::id).collect(),
            valid_ids: batch.valid_adds.iter().map(Episode::id).collect(),
            warnings: batch.warnings.iter().map(ToString::to_string).collect(),
        });
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let io = |source| DataError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let text = serde_json::to_string_pretty(self).expect("ledger serializes");
        std::fs::write(path, text + "\n").map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{ApiCall, Fold, Origin, Speaker, Turn};

    fn ep(intent: &str, value: &str, success: bool) -> Episode {
        let goal = ApiCall::new(intent, [("x", value)]).unwrap();
        Episode {
            goal,
            schema: None,
            turns: vec![Turn::new(Speaker::User, format!("hi {value}"))],
            success,
            domain: "d".into(),
            fold: Fold::Train,
            origin: Origin::Human,
        }
    }

    #[test]
    fn ranking_sorts_by_tsr_then_name() {
        let mut eps = vec![];
        for i in 0..10 {
            eps.push(ep("C", &i.to_string(), true));
            eps.push(ep("B", &i.to_string(), i < 5));
            eps.push(ep("A", &i.to_string(), false));
            eps.push(ep("Z", &i.to_string(), i < 5));
        }
        let t = rank_schemas(&eps).unwrap();
        assert_eq!(t.intents().collect::<Vec<_>>(), ["A", "B", "Z", "C"]);
        assert_eq!(t.rows[0].n_goals, 10);
        assert!(rank_schemas(&[]).is_err());
    }

    #[test]
    fn batch_is_round_robin_and_short_pools_warn() {
        let intents: Vec<String> = (0..10).map(|i| format!("I{i}")).collect();
        let pool: Vec<Episode> = intents
            .iter()
            .flat_map(|i| (0..3).map(move |v| ep(i, &v.to_string(), true)))
            .collect();
        let table = rank_schemas(&pool).unwrap();
        let b = select_al_batch(&table, &pool, &pool[..5], &BTreeSet::new(), 8, 8, 1);
        assert_eq!(b.schemas.len(), 8);
        assert_eq!(b.train_adds.len(), 8);
        let chosen: BTreeSet<&str> = b.train_adds.iter().map(|e| e.goal.intent()).collect();
        assert_eq!(chosen.len(), 8);
        assert!(chosen.iter().all(|i| b.schemas.iter().any(|s| s == i)));
        assert_eq!(b.valid_adds.len(), 5);
        assert_eq!(b.warnings.len(), 1);

        let mut ledger = AlLedger::default();
        ledger.record(1, 1, "active", &b);
        let again = select_al_batch(&table, &pool, &[], &ledger.taken(), 8, 8, 1);
        let first: BTreeSet<String> = b.train_adds.iter().map(Episode::id).collect();
        assert!(again.train_adds.iter().all(|e| !first.contains(&e.id())));
    }

    #[test]
    fn random_sample_sizes() {
        let pool: Vec<Episode> = (0..5).map(|i| ep("A", &i.to_string(), true)).collect();
        assert!(select_random_fewshot(&pool, 0, 1).is_empty());
        assert_eq!(select_random_fewshot(&pool, 9, 1), pool);
        assert_eq!(select_random_fewshot(&pool, 3, 4), select_random_fewshot(&pool, 3, 4));
    }
}
