//! Self-training loop: generate dialogues for unlabeled goals with the
//! schema-aware model pair, keep the successful ones, retrain both model
//! variants on everything accumulated so far, evaluate, repeat.
//!
//! Every iteration leaves a snapshot directory `iter_<k>/` under the output
//! root, holding the accumulated data, the metrics and a small `state.json`.
//! A run pointed at an existing root resumes after its last snapshot.

mod trainer;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active_learning::{self, AlBatch, AlLedger, SchemaScoreTable, K_CONVS, K_SCHEMAS, LEDGER_FILE};
use crate::agents::{Agent, AgentError, DecodeConfig};
use crate::data_io::{self, DataError};
use crate::dialogue::{serialize_call, ApiCall, Episode};
use crate::metrics::{self, MetricError, MetricReport};
use crate::mock_api::ApiBackend;
use crate::orchestrator::{rollout_tsr, ConfigError, SimConfig, Simulator};
use crate::seed;

pub use trainer::{
    ExemplarTrainer, ExternalCommandTrainer, TrainRequest, Trainer, TrainerError, CHECKPOINT_PREFIX,
    DEFAULT_TRAINER_TIMEOUT,
};

pub const STATE_FILE: &str = "state.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SYNTHETIC_TRAIN_FILE: &str = "synthetic_train.jsonl";
pub const SYNTHETIC_VALID_FILE: &str = "synthetic_valid.jsonl";
pub const INJECTED_TRAIN_FILE: &str = "injected_train.jsonl";
pub const INJECTED_VALID_FILE: &str = "injected_valid.jsonl";
/// Every episode of an iteration's generation batch, successful or not.
pub const GENERATION_FILE: &str = "generation.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum BootstrapError {
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("every rollout failed: {0}")]
    Agent(AgentError),
    #[error("snapshot {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub iterations: usize,
    /// Generation settings; `schema_aware` is forced on.
    pub sim: SimConfig,
    pub eval_rollouts: usize,
    pub valid_share: f64,
    /// Train on in-domain episodes alongside the synthetic ones.
    pub multitask: bool,
    pub seed: u64,
    pub k_schemas: usize,
    pub k_convs: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            sim: SimConfig {
                schema_aware: true,
                ..SimConfig::default()
            },
            eval_rollouts: 5,
            valid_share: 0.1,
            multitask: true,
            seed: 0,
            k_schemas: K_SCHEMAS,
            k_convs: K_CONVS,
        }
    }
}

/// Human conversations injected after each generation step.
#[derive(Debug, Clone, Copy)]
pub enum Injection<'a> {
    /// Matching conversations for the worst schemas of the generation batch.
    Active { pool_train: &'a [Episode], pool_valid: &'a [Episode] },
    /// The same budget drawn uniformly.
    Random { pool_train: &'a [Episode], pool_valid: &'a [Episode] },
}

pub struct BootstrapInputs<'a> {
    /// Unlabeled goals to generate dialogues for.
    pub goals: &'a [ApiCall],
    pub api: &'a dyn ApiBackend,
    pub domains: &'a BTreeMap<String, String>,
    /// User for generation and evaluation; `None` lets each model play both
    /// roles.
    pub user: Option<&'a dyn Agent>,
    pub in_domain: &'a [Episode],
    /// Held-out goals the schema-agnostic model is evaluated on.
    pub eval_goals: &'a [ApiCall],
    pub in_domain_eval_goals: &'a [ApiCall],
    /// Gold episodes for teacher-forced JGA, BLEU-4 and TEM.
    pub offline_gold: &'a [Episode],
    pub injection: Option<Injection<'a>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRefs {
    pub schema_aware: PathBuf,
    pub schema_agnostic: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub rollouts: usize,
    pub successes: usize,
    pub errors: usize,
    pub tsr: f64,
    pub train_added: usize,
    pub valid_added: usize,
    pub per_schema: SchemaScoreTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub generation: Option<GenerationStats>,
    /// Schema-agnostic model on the held-out goals.
    pub ood: Option<MetricReport>,
    pub ood_schema_aware_tsr: Option<f64>,
    pub in_domain_tsr: Option<f64>,
    /// Token exact match of the schema-aware model on the synthetic valid set.
    pub selection_tem: Option<f64>,
    pub n_synthetic_train: usize,
    pub n_synthetic_valid: usize,
    pub n_injected_train: usize,
    pub n_injected_valid: usize,
    pub warnings: Vec<String>,
}

impl IterationReport {
    pub fn ood_tsr(&self) -> Option<f64> {
        self.ood.as_ref().map(|r| r.tsr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapState {
    pub iteration: usize,
    pub synthetic_train: Vec<Episode>,
    pub synthetic_valid: Vec<Episode>,
    pub injected_train: Vec<Episode>,
    pub injected_valid: Vec<Episode>,
    pub model_refs: ModelRefs,
    pub baseline: IterationReport,
    pub history: Vec<IterationReport>,
    pub ledger: AlLedger,
}

/// The part of the state kept in `state.json`; episodes live in JSONL files
/// next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateMeta {
    iteration: usize,
    model_refs: ModelRefs,
    baseline: IterationReport,
    history: Vec<IterationReport>,
    ledger: AlLedger,
}

pub fn iter_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("iter_{k}"))
}

/// Goals whose canonical form hashes into the lowest `valid_share` of the
/// distinct goals.
pub fn valid_goals(goals: &[ApiCall], valid_share: f64) -> BTreeSet<String> {
    let keys: BTreeSet<String> = goals.iter().map(|g| serialize_call(&g.canonical())).collect();
    let mut ranked: Vec<(Vec<u8>, String)> = keys
        .into_iter()
        .map(|k| (Sha256::digest(k.as_bytes()).to_vec(), k))
        .collect();
    ranked.sort();
    let n_valid = (valid_share * ranked.len() as f64).round() as usize;
    ranked.into_iter().take(n_valid).map(|(_, k)| k).collect()
}

fn snapshot_err(path: &Path, reason: impl ToString) -> BootstrapError {
    BootstrapError::Snapshot {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BootstrapError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| snapshot_err(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("snapshot types serialize");
    std::fs::write(path, text + "\n").map_err(|e| snapshot_err(path, e))
}

/// Paths inside `root` are kept relative so a snapshot can be moved.
fn relative(root: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

pub struct Bootstrap<'a> {
    pub cfg: BootstrapConfig,
    pub inputs: BootstrapInputs<'a>,
    pub trainer: &'a dyn Trainer,
    pub root: PathBuf,
}

struct Models {
    aware: Arc<dyn Agent>,
    agnostic: Arc<dyn Agent>,
}

impl<'a> Bootstrap<'a> {
    fn load_models(&self, refs: &ModelRefs) -> Result<Models, BootstrapError> {
        Ok(Models {
            aware: self.trainer.load(&self.root.join(&refs.schema_aware))?,
            agnostic: self.trainer.load(&self.root.join(&refs.schema_agnostic))?,
        })
    }

    fn evaluate(&self, models: &Models, k: usize, report: &mut IterationReport) -> Result<(), BootstrapError> {
        let inputs = &self.inputs;
        let cfg = SimConfig {
            rollouts_per_goal: self.cfg.eval_rollouts,
            schema_aware: false,
            decode: self.cfg.sim.decode.with_seed(seed::mix(&[self.cfg.seed, k as u64, 2])),
            ..self.cfg.sim
        };
        let run = |assistant: &dyn Agent, goals: &[ApiCall], aware: bool| {
            let user = inputs.user.unwrap_or(assistant);
            let sim = Simulator::new(user, assistant, inputs.api, inputs.domains);
            let cfg = SimConfig {
                schema_aware: aware,
                ..cfg
            };
            sim.run_batch(goals, &cfg)
        };
        if !inputs.eval_goals.is_empty() {
            let rollouts = run(&*models.agnostic, inputs.eval_goals, false);
            let episodes: Vec<Episode> = rollouts.iter().map(|r| r.episode.clone()).collect();
            let mut ood = MetricReport::from_episodes(&episodes)?;
            if let Some(tsr) = rollout_tsr(&rollouts, cfg.exclude_errors) {
                ood.tsr = tsr;
            }
            if !inputs.offline_gold.is_empty() {
                let greedy = DecodeConfig::greedy(self.cfg.seed);
                match metrics::teacher_forced(&*models.agnostic, inputs.offline_gold, false, greedy) {
                    Ok(s) => {
                        ood.jga = Some(s.jga);
                        ood.bleu4 = Some(s.bleu4);
                        ood.tem = Some(s.tem);
                    }
                    Err(e) => report.warnings.push(format!("offline metrics: {e}")),
                }
            }
            report.ood = Some(ood);
            let aware = run(&*models.aware, inputs.eval_goals, true);
            report.ood_schema_aware_tsr = rollout_tsr(&aware, cfg.exclude_errors);
        }
        if !inputs.in_domain_eval_goals.is_empty() {
            let rollouts = run(&*models.agnostic, inputs.in_domain_eval_goals, false);
            report.in_domain_tsr = rollout_tsr(&rollouts, cfg.exclude_errors);
        }
        Ok(())
    }

    fn train_both(&self, dir: &Path, train: &[Episode], valid: &[Episode], init: Option<&ModelRefs>) -> Result<ModelRefs, BootstrapError> {
        let train_path = dir.join("train_input.jsonl");
        let valid_path = dir.join("valid_input.jsonl");
        data_io::write_episodes(&train_path, train)?;
        data_io::write_episodes(&valid_path, valid)?;
        let models = dir.join("models");
        let job = |aware: bool| -> Result<PathBuf, BootstrapError> {
            let init = init.map(|r| self.root.join(if aware { &r.schema_aware } else { &r.schema_agnostic }));
            let out = models.join(if aware { "schema_aware" } else { "schema_agnostic" });
            let path = self.trainer.train(&TrainRequest {
                train: &train_path,
                valid: &valid_path,
                init: init.as_deref(),
                schema_aware: aware,
                out_dir: &out,
            })?;
            Ok(relative(&self.root, &path))
        };
        Ok(ModelRefs {
            schema_aware: job(true)?,
            schema_agnostic: job(false)?,
        })
    }

    fn save(&self, state: &BootstrapState, report: &IterationReport) -> Result<(), BootstrapError> {
        let dir = iter_dir(&self.root, state.iteration);
        data_io::write_episodes(&dir.join(SYNTHETIC_TRAIN_FILE), &state.synthetic_train)?;
        data_io::write_episodes(&dir.join(SYNTHETIC_VALID_FILE), &state.synthetic_valid)?;
        data_io::write_episodes(&dir.join(INJECTED_TRAIN_FILE), &state.injected_train)?;
        data_io::write_episodes(&dir.join(INJECTED_VALID_FILE), &state.injected_valid)?;
        write_json(&dir.join(METRICS_FILE), report)?;
        if self.inputs.injection.is_some() {
            state.ledger.save(&self.root.join(LEDGER_FILE))?;
        }
        write_json(
            &dir.join(STATE_FILE),
            &StateMeta {
                iteration: state.iteration,
                model_refs: state.model_refs.clone(),
                baseline: state.baseline.clone(),
                history: state.history.clone(),
                ledger: state.ledger.clone(),
            },
        )
    }

    /// Latest snapshot under the root, if any.
    pub fn load_snapshot(&self) -> Result<Option<BootstrapState>, BootstrapError> {
        let latest = (0..=self.cfg.iterations)
            .rev()
            .find(|&k| iter_dir(&self.root, k).join(STATE_FILE).is_file());
        let Some(k) = latest else {
            return Ok(None);
        };
        let dir = iter_dir(&self.root, k);
        let path = dir.join(STATE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| snapshot_err(&path, e))?;
        let meta: StateMeta = serde_json::from_str(&text).map_err(|e| snapshot_err(&path, e))?;
        Ok(Some(BootstrapState {
            iteration: meta.iteration,
            synthetic_train: data_io::load_episodes(&dir.join(SYNTHETIC_TRAIN_FILE))?,
            synthetic_valid: data_io::load_episodes(&dir.join(SYNTHETIC_VALID_FILE))?,
            injected_train: data_io::load_episodes(&dir.join(INJECTED_TRAIN_FILE))?,
            injected_valid: data_io::load_episodes(&dir.join(INJECTED_VALID_FILE))?,
            model_refs: meta.model_refs,
            baseline: meta.baseline,
            history: meta.history,
            ledger: meta.ledger,
        }))
    }

    fn training_data(&self, state: &BootstrapState) -> (Vec<Episode>, Vec<Episode>) {
        let mut train = state.synthetic_train.clone();
        train.extend(state.injected_train.iter().cloned());
        if self.cfg.multitask {
            train.extend(self.inputs.in_domain.iter().cloned());
        }
        let mut valid = state.synthetic_valid.clone();
        valid.extend(state.injected_valid.iter().cloned());
        (train, valid)
    }

    /// Iteration 0: the starting models and their scores. Without `base`
    /// both variants are trained from scratch on the in-domain episodes.
    pub fn initialize(&self, base: Option<ModelRefs>) -> Result<BootstrapState, BootstrapError> {
        let dir = iter_dir(&self.root, 0);
        let model_refs = match base {
            Some(refs) => refs,
            None => self.train_both(&dir, self.inputs.in_domain, &[], None)?,
        };
        let models = self.load_models(&model_refs)?;
        let mut baseline = IterationReport {
            iteration: 0,
            generation: None,
            ood: None,
            ood_schema_aware_tsr: None,
            in_domain_tsr: None,
            selection_tem: None,
            n_synthetic_train: 0,
            n_synthetic_valid: 0,
            n_injected_train: 0,
            n_injected_valid: 0,
            warnings: Vec::new(),
        };
        self.evaluate(&models, 0, &mut baseline)?;
        let state = BootstrapState {
            iteration: 0,
            synthetic_train: Vec::new(),
            synthetic_valid: Vec::new(),
            injected_train: Vec::new(),
            injected_valid: Vec::new(),
            model_refs,
            baseline: baseline.clone(),
            history: Vec::new(),
            ledger: AlLedger::default(),
        };
        self.save(&state, &baseline)?;
        Ok(state)
    }

    fn inject(&self, state: &mut BootstrapState, table: &SchemaScoreTable, k: usize, report: &mut IterationReport) {
        let Some(injection) = self.inputs.injection else {
            return;
        };
        let seed = seed::mix(&[self.cfg.seed, k as u64, 3]);
        let taken = state.ledger.taken();
        let (policy, batch) = match injection {
            Injection::Active { pool_train, pool_valid } => (
                "active",
                active_learning::select_al_batch(
                    table,
                    pool_train,
                    pool_valid,
                    &taken,
                    self.cfg.k_schemas,
                    self.cfg.k_convs,
                    seed,
                ),
            ),
            Injection::Random { pool_train, pool_valid } => {
                let fresh = |pool: &[Episode]| -> Vec<Episode> {
                    pool.iter().filter(|e| !taken.contains(&e.id())).cloned().collect()
                };
                (
                    "random",
                    AlBatch {
                        schemas: Vec::new(),
                        train_adds: active_learning::select_random_fewshot(&fresh(pool_train), self.cfg.k_convs, seed),
                        valid_adds: active_learning::select_random_fewshot(
                            &fresh(pool_valid),
                            self.cfg.k_convs,
                            seed::mix(&[seed, 1]),
                        ),
                        warnings: Vec::new(),
                    },
                )
            }
        };
        report.warnings.extend(batch.warnings.iter().map(ToString::to_string));
        state.ledger.record(k, seed, policy, &batch);
        state.injected_train.extend(batch.train_adds);
        state.injected_valid.extend(batch.valid_adds);
    }

    /// One generate, filter, accumulate, retrain, evaluate step.
    pub fn iteration(&self, mut state: BootstrapState) -> Result<BootstrapState, BootstrapError> {
        let k = state.iteration + 1;
        let dir = iter_dir(&self.root, k);
        let models = self.load_models(&state.model_refs)?;
        let gen_cfg = SimConfig {
            schema_aware: true,
            decode: self.cfg.sim.decode.with_seed(seed::mix(&[self.cfg.seed, k as u64, 1])),
            ..self.cfg.sim
        };
        gen_cfg.validate()?;
        let user = self.inputs.user.unwrap_or(&*models.aware);
        let sim = Simulator::new(user, &*models.aware, self.inputs.api, self.inputs.domains);
        let rollouts = sim.run_batch(self.inputs.goals, &gen_cfg);
        let errors = rollouts.iter().filter(|r| r.error.is_some()).count();
        if !rollouts.is_empty() && errors == rollouts.len() {
            let first = rollouts[0].error.clone().expect("every rollout errored");
            return Err(BootstrapError::Agent(first));
        }
        let episodes: Vec<Episode> = rollouts
            .iter()
            .filter(|r| !(gen_cfg.exclude_errors && r.error.is_some()))
            .map(|r| r.episode.clone())
            .collect();
        data_io::write_episodes(&dir.join(GENERATION_FILE), &episodes)?;
        let table = if episodes.is_empty() {
            SchemaScoreTable::default()
        } else {
            active_learning::rank_schemas(&episodes)?
        };
        let held = valid_goals(self.inputs.goals, self.cfg.valid_share);
        let (mut train_added, mut valid_added) = (0, 0);
        for ep in episodes.iter().filter(|e| e.success) {
            if held.contains(&serialize_call(&ep.goal.canonical())) {
                state.synthetic_valid.push(ep.clone());
                valid_added += 1;
            } else {
                state.synthetic_train.push(ep.clone());
                train_added += 1;
            }
        }
        let successes = train_added + valid_added;
        let mut report = IterationReport {
            iteration: k,
            generation: Some(GenerationStats {
                rollouts: rollouts.len(),
                successes,
                errors,
                tsr: rollout_tsr(&rollouts, gen_cfg.exclude_errors).unwrap_or(0.0),
                train_added,
                valid_added,
                per_schema: table.clone(),
            }),
            ood: None,
            ood_schema_aware_tsr: None,
            in_domain_tsr: None,
            selection_tem: None,
            n_synthetic_train: 0,
            n_synthetic_valid: 0,
            n_injected_train: 0,
            n_injected_valid: 0,
            warnings: Vec::new(),
        };
        if successes == 0 {
            log::warn!("iteration {k}: no successful dialogues");
            report.warnings.push("NoSuccesses: generation produced no successful dialogues".into());
        }
        let injected_before = state.injected_train.len() + state.injected_valid.len();
        self.inject(&mut state, &table, k, &mut report);
        let injected = state.injected_train.len() + state.injected_valid.len() - injected_before;

        let models = if successes + injected > 0 {
            let (train, valid) = self.training_data(&state);
            state.model_refs = self.train_both(&dir, &train, &valid, Some(&state.model_refs))?;
            self.load_models(&state.model_refs)?
        } else {
            models
        };
        if !state.synthetic_valid.is_empty() {
            let greedy = DecodeConfig::greedy(self.cfg.seed);
            match metrics::teacher_forced(&*models.aware, &state.synthetic_valid, true, greedy) {
                Ok(s) => report.selection_tem = Some(s.tem),
                Err(e) => report.warnings.push(format!("selection metrics: {e}")),
            }
        }
        self.evaluate(&models, k, &mut report)?;
        report.n_synthetic_train = state.synthetic_train.len();
        report.n_synthetic_valid = state.synthetic_valid.len();
        report.n_injected_train = state.injected_train.len();
        report.n_injected_valid = state.injected_valid.len();
        state.iteration = k;
        state.history.push(report.clone());
        self.save(&state, &report)?;
        log::info!(
            "iteration {k}: {successes} successes, ood tsr {:?}, in-domain tsr {:?}",
            report.ood_tsr(),
            report.in_domain_tsr
        );
        Ok(state)
    }

    /// Runs until `cfg.iterations` iterations exist under the root, resuming
    /// from the latest snapshot.
    pub fn run(&self, base: Option<ModelRefs>) -> Result<BootstrapState, BootstrapError> {
        let mut state = match self.load_snapshot()? {
            Some(state) => state,
            None => self.initialize(base)?,
        };
        while state.iteration < self.cfg.iterations {
            state = self.iteration(state)?;
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_split_is_by_goal() {
        let goals: Vec<ApiCall> = (0..40)
            .map(|i| ApiCall::new("A", [("x", i.to_string())]).unwrap())
            .collect();
        let held = valid_goals(&goals, 0.1);
        assert_eq!(held.len(), 4);
        let mut doubled = goals.clone();
        doubled.extend(goals.iter().cloned());
        assert_eq!(valid_goals(&doubled, 0.1), held);
    }
}
