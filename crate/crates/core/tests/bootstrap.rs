use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use todsim_core::agents::{Agent, AgentError, Observation, Role, ScriptedAssistant, ScriptedUser};
use todsim_core::bootstrap::{
    iter_dir, Bootstrap, BootstrapConfig, BootstrapInputs, ExemplarTrainer, ExternalCommandTrainer, TrainRequest, Trainer,
    TrainerError, METRICS_FILE, SYNTHETIC_TRAIN_FILE,
};
use todsim_core::data_io;
use todsim_core::fixture::{Corpus, World};
use todsim_core::{ApiCall, ApiTable, Episode, Fold, Origin};

/// The scripted pair behind a checkpoint-shaped interface; `silent` makes
/// the Assistant say nothing.
struct OracleTrainer {
    world: World,
    silent: bool,
}

struct Pair {
    user: ScriptedUser,
    asst: ScriptedAssistant,
    silent: bool,
}

impl Agent for Pair {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        match obs.role {
            Role::User => self.user.act(obs),
            Role::Assistant if self.silent => Ok(String::new()),
            Role::Assistant => self.asst.act(obs),
        }
    }
}

impl Trainer for OracleTrainer {
    fn train(&self, req: &TrainRequest<'_>) -> Result<PathBuf, TrainerError> {
        std::fs::create_dir_all(req.out_dir).unwrap();
        let path = req.out_dir.join("oracle");
        std::fs::write(&path, "").unwrap();
        Ok(path)
    }

    fn load(&self, _: &Path) -> Result<Arc<dyn Agent>, TrainerError> {
        let book = Arc::new(self.world.phrasebook());
        Ok(Arc::new(Pair {
            user: ScriptedUser::new(book.clone()),
            asst: ScriptedAssistant::new(book),
            silent: self.silent,
        }))
    }
}

struct Setup {
    goals: Vec<ApiCall>,
    eval: Vec<ApiCall>,
    table: ApiTable,
    domains: std::collections::BTreeMap<String, String>,
    in_domain: Vec<Episode>,
}

fn setup() -> Setup {
    let world = World::holdout();
    let sets = world.fold_goals(&[2, 1], 3);
    let mut all = sets[0].clone();
    all.extend(sets[1].iter().cloned());
    let ind = World::in_domain();
    let corpus = Corpus::build(&ind, (2, 0, 0), 3);
    let mut table = world.table(&all, 3);
    table.merge(&corpus.table);
    let mut domains = world.domain_map();
    domains.extend(ind.domain_map());
    Setup {
        goals: sets[0][..10].to_vec(),
        eval: sets[1].clone(),
        table,
        domains,
        in_domain: corpus.episodes,
    }
}

fn inputs(s: &Setup) -> BootstrapInputs<'_> {
    BootstrapInputs {
        goals: &s.goals,
        api: &s.table,
        domains: &s.domains,
        user: None,
        in_domain: &s.in_domain,
        eval_goals: &s.eval,
        in_domain_eval_goals: &[],
        offline_gold: &[],
        injection: None,
    }
}

#[test]
fn oracle_iteration_splits_by_goal() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let trainer = OracleTrainer {
        world: World::holdout(),
        silent: false,
    };
    let b = Bootstrap {
        cfg: BootstrapConfig {
            iterations: 1,
            ..BootstrapConfig::default()
        },
        inputs: inputs(&s),
        trainer: &trainer,
        root: dir.path().to_path_buf(),
    };
    let state = b.run(None).unwrap();
    assert_eq!(state.iteration, 1);
    assert_eq!(state.synthetic_train.len(), 180);
    assert_eq!(state.synthetic_valid.len(), 20);
    let train_goals: BTreeSet<String> = state.synthetic_train.iter().map(|e| e.goal.to_string()).collect();
    let valid_goals: BTreeSet<String> = state.synthetic_valid.iter().map(|e| e.goal.to_string()).collect();
    assert_eq!((train_goals.len(), valid_goals.len()), (9, 1));
    assert!(train_goals.is_disjoint(&valid_goals));
    for ep in state.synthetic_train.iter().chain(&state.synthetic_valid) {
        assert!(ep.success);
        assert_eq!(ep.origin, Origin::Synthetic);
    }
    assert_eq!(state.history.len(), 1);
    assert_eq!(state.history[0].ood_schema_aware_tsr, Some(1.0));
    let on_disk = data_io::load_episodes(&iter_dir(dir.path(), 1).join(SYNTHETIC_TRAIN_FILE)).unwrap();
    assert_eq!(on_disk, state.synthetic_train);
    assert!(iter_dir(dir.path(), 1).join(METRICS_FILE).is_file());
}

#[test]
fn no_successes_leaves_the_data_unchanged() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let trainer = OracleTrainer {
        world: World::holdout(),
        silent: true,
    };
    let b = Bootstrap {
        cfg: BootstrapConfig {
            iterations: 2,
            ..BootstrapConfig::default()
        },
        inputs: inputs(&s),
        trainer: &trainer,
        root: dir.path().to_path_buf(),
    };
    let state = b.run(None).unwrap();
    assert_eq!(state.iteration, 2);
    assert!(state.synthetic_train.is_empty() && state.synthetic_valid.is_empty());
    assert!(state.history.iter().all(|h| h.warnings.iter().any(|w| w.starts_with("NoSuccesses"))));
}

fn exemplar_run(s: &Setup, root: &Path, iterations: usize) -> todsim_core::bootstrap::BootstrapState {
    let user = ScriptedUser::new(Arc::new(World::merged(&[&World::in_domain(), &World::holdout()]).phrasebook()));
    let mut inp = inputs(s);
    inp.user = Some(&user);
    let b = Bootstrap {
        cfg: BootstrapConfig {
            iterations,
            sim: todsim_core::orchestrator::SimConfig {
                rollouts_per_goal: 4,
                schema_aware: true,
                ..Default::default()
            },
            eval_rollouts: 2,
            ..BootstrapConfig::default()
        },
        inputs: inp,
        trainer: &ExemplarTrainer,
        root: root.to_path_buf(),
    };
    b.run(None).unwrap()
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let s = setup();
    let full = tempfile::tempdir().unwrap();
    let straight = exemplar_run(&s, full.path(), 3);
    let cut = tempfile::tempdir().unwrap();
    let first = exemplar_run(&s, cut.path(), 1);
    assert_eq!(first.history[0], straight.history[0]);
    let resumed = exemplar_run(&s, cut.path(), 3);
    assert_eq!(resumed, straight);

    let mut prev: Vec<Episode> = Vec::new();
    for k in 1..=3 {
        let cur = data_io::load_episodes(&iter_dir(full.path(), k).join(SYNTHETIC_TRAIN_FILE)).unwrap();
        assert!(cur.len() >= prev.len());
        assert_eq!(&cur[..prev.len()], &prev[..]);
        assert!(cur.iter().all(|e| e.success));
        prev = cur;
    }
    let a = std::fs::read(iter_dir(full.path(), 3).join(METRICS_FILE)).unwrap();
    let b = std::fs::read(iter_dir(cut.path(), 3).join(METRICS_FILE)).unwrap();
    assert_eq!(a, b);
}

#[cfg(unix)]
fn script(dir: &Path, body: &str) -> String {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join("train.sh");
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path.to_string_lossy().into_owned()
}

#[cfg(unix)]
#[test]
fn external_trainer_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let req = TrainRequest {
        train: Path::new("/data/train.jsonl"),
        valid: Path::new("/data/valid.jsonl"),
        init: Some(Path::new("/ckpt/prev")),
        schema_aware: false,
        out_dir: &out,
    };
    let ok = script(dir.path(), "echo \"$@\" > args.txt\necho training\necho CHECKPOINT model.bin");
    let got = ExternalCommandTrainer::new(&ok, "http://localhost:1").train(&req).unwrap();
    assert_eq!(got, out.join("model.bin"));
    let args = std::fs::read_to_string(out.join("args.txt")).unwrap();
    assert_eq!(
        args.trim(),
        "--train /data/train.jsonl --valid /data/valid.jsonl --init /ckpt/prev --role both --schema-aware false"
    );

    let fail = script(dir.path(), "echo broken >&2\nexit 3");
    let err = ExternalCommandTrainer::new(&fail, "").train(&req).unwrap_err();
    assert!(matches!(err, TrainerError::Failed { ref stderr, .. } if stderr == "broken"), "{err}");

    let silent = script(dir.path(), "exit 0");
    assert!(matches!(ExternalCommandTrainer::new(&silent, "").train(&req), Err(TrainerError::NoCheckpoint)));

    let slow = script(dir.path(), "sleep 5");
    let err = ExternalCommandTrainer::new(&slow, "")
        .with_timeout(Duration::from_millis(200))
        .train(&req)
        .unwrap_err();
    assert!(matches!(err, TrainerError::Timeout(_)));

    let missing = ExternalCommandTrainer::new("/nonexistent/trainer", "").train(&req);
    assert!(matches!(missing, Err(TrainerError::Spawn { .. })));
}

#[test]
fn exemplar_checkpoints_round_trip() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    data_io::write_episodes(&train, &s.in_domain).unwrap();
    let req = TrainRequest {
        train: &train,
        valid: &train,
        init: None,
        schema_aware: true,
        out_dir: dir.path(),
    };
    let ckpt = ExemplarTrainer.train(&req).unwrap();
    let store = ExemplarTrainer::load_store(&ckpt).unwrap();
    assert!(!store.is_empty());
    let again = ExemplarTrainer
        .train(&TrainRequest {
            init: Some(&ckpt),
            ..req.clone()
        })
        .unwrap();
    // Re-absorbing the same corpus adds nothing.
    assert_eq!(ExemplarTrainer::load_store(&again).unwrap(), store);
    assert!(s.in_domain.iter().all(|e| e.fold != Fold::Test));
}
