//! Task queue and annotation log. The tasks file is written once; the
//! annotation log is append-only. Reopening a directory replays the log.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::analysis::{analyze, Analysis};
use crate::tasks::{Annotation, EvalTask};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const DEFAULT_LEASE: Duration = Duration::from_secs(15 * 60);

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("duplicate task id {0}")]
    DuplicateTaskId(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("annotator {annotator} never claimed task {task}")]
    NotClaimed { task: String, annotator: String },
    #[error("annotator {annotator} already annotated task {task}")]
    Duplicate { task: String, annotator: String },
    #[error("annotator id must be non-empty")]
    EmptyAnnotator,
}

#[derive(Debug, Clone)]
pub struct SessionPolicy {
    /// Control tasks each annotator is served; the first is served first.
    pub controls_per_annotator: usize,
    /// Annotator-completed tasks between two controls.
    pub control_every: usize,
    pub lease: Duration,
    /// Control failures tolerated before an annotator is excluded.
    pub max_control_failures: usize,
}

impl Default for SessionPolicy {
    fn default() -> Self {
        Self {
            controls_per_annotator: 1,
            control_every: 5,
            lease: DEFAULT_LEASE,
            max_control_failures: 0,
        }
    }
}

struct Inner {
    annotations: Vec<Annotation>,
    counts: Vec<usize>,
    done: HashMap<String, HashSet<usize>>,
    leases: HashMap<usize, (String, Instant)>,
    claims: HashSet<(usize, String)>,
    log: File,
}

pub struct EvalStore {
    dir: PathBuf,
    tasks: Vec<EvalTask>,
    index: HashMap<String, usize>,
    policy: SessionPolicy,
    inner: Mutex<Inner>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `tasks` as the tasks file of `dir`, replacing any previous one.
pub fn write_tasks(dir: &Path, tasks: &[EvalTask]) -> Result<PathBuf, StoreError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(TASKS_FILE);
    let mut text = String::new();
    for t in tasks {
        text.push_str(&serde_json::to_string(t).expect("tasks serialize"));
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, tolerate_torn_tail: bool) -> Result<Vec<T>, StoreError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && tolerate_torn_tail => return Ok(vec![]),
        Err(e) => return Err(io(path)(e)),
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) if tolerate_torn_tail && i + 1 == lines.len() && !text.ends_with('\n') => {
                log::warn!("{}: ignoring torn last line: {e}", path.display());
            }
            Err(e) => {
                return Err(StoreError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

impl EvalStore {
    /// Opens `dir`, which must hold a tasks file, and replays its annotation log.
    pub fn open(dir: &Path, policy: SessionPolicy) -> Result<Self, StoreError> {
        let tasks: Vec<EvalTask> = read_jsonl(&dir.join(TASKS_FILE), false)?;
        let mut index = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(StoreError::DuplicateTaskId(t.id.clone()));
            }
        }
        let log_path = dir.join(ANNOTATIONS_FILE);
        let annotations: Vec<Annotation> = read_jsonl(&log_path, true)?;
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io(&log_path))?;
        // Cut a torn tail so the next append starts on a fresh line.
        let bytes = std::fs::read(&log_path).map_err(io(&log_path))?;
        if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            log.set_len(keep as u64).map_err(io(&log_path))?;
        }
        let mut inner = Inner {
            annotations: Vec::new(),
            counts: vec![0; tasks.len()],
            done: HashMap::new(),
            leases: HashMap::new(),
            claims: HashSet::new(),
            log,
        };
        for a in annotations {
            match index.get(&a.task_id) {
                Some(&i) => {
                    inner.counts[i] += 1;
                    inner.done.entry(a.annotator_id.clone()).or_default().insert(i);
                    inner.claims.insert((i, a.annotator_id.clone()));
                    inner.annotations.push(a);
                }
                None => log::warn!("annotation log names unknown task {}", a.task_id),
            }
        }
        log::info!(
            "eval store {}: {} tasks, {} annotations",
            dir.display(),
            tasks.len(),
            inner.annotations.len()
        );
        Ok(Self {
            dir: dir.to_path_buf(),
            tasks,
            index,
            policy,
            inner: Mutex::new(inner),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn tasks(&self) -> &[EvalTask] {
        &self.tasks
    }

    pub fn policy(&self) -> &SessionPolicy {
        &self.policy
    }

    /// Claims the next task for `annotator`: a live lease they already hold,
    /// else a control if one is due, else the least-annotated comparison they
    /// have not done and nobody else holds. `None` when nothing is left.
    pub fn next_task(&self, annotator: &str) -> Result<Option<&EvalTask>, StoreError> {
        if annotator.is_empty() {
            return Err(StoreError::EmptyAnnotator);
        }
        let now = Instant::now();
        let mut inner = self.inner.lock().expect("store lock");
        inner.leases.retain(|_, (_, until)| *until > now);
        let done = inner.done.get(annotator).cloned().unwrap_or_default();
        if let Some((&i, _)) = inner
            .leases
            .iter()
            .filter(|(i, (who, _))| who == annotator && !done.contains(i))
            .min_by_key(|(i, _)| **i)
        {
            return Ok(Some(&self.tasks[i]));
        }
        let controls_done = done.iter().filter(|&&i| self.tasks[i].is_control).count();
        let control_due = controls_done < self.policy.controls_per_annotator
            && done.len() >= controls_done * self.policy.control_every.max(1);
        let pick = |want_control: bool| {
            (0..self.tasks.len())
                .filter(|i| self.tasks[*i].is_control == want_control && !done.contains(i))
                .filter(|i| want_control || !inner.leases.contains_key(i))
                .min_by_key(|&i| (inner.counts[i], i))
        };
        let chosen = if control_due { pick(true).or_else(|| pick(false)) } else { pick(false) };
        let Some(i) = chosen else {
            return Ok(None);
        };
        // Controls are shared by every annotator, so only comparisons are leased.
        if !self.tasks[i].is_control {
            inner.leases.insert(i, (annotator.to_string(), now + self.policy.lease));
        }
        inner.claims.insert((i, annotator.to_string()));
        Ok(Some(&self.tasks[i]))
    }

    /// Appends `a` to the log. The annotator must have claimed the task.
    pub fn annotate(&self, mut a: Annotation) -> Result<(), StoreError> {
        if a.annotator_id.is_empty() {
            return Err(StoreError::EmptyAnnotator);
        }
        let &i = self.index.get(&a.task_id).ok_or_else(|| StoreError::UnknownTask(a.task_id.clone()))?;
        let mut inner = self.inner.lock().expect("store lock");
        if inner.done.get(&a.annotator_id).is_some_and(|d| d.contains(&i)) {
            return Err(StoreError::Duplicate {
                task: a.task_id,
                annotator: a.annotator_id,
            });
        }
        if !inner.claims.contains(&(i, a.annotator_id.clone())) {
            return Err(StoreError::NotClaimed {
                task: a.task_id,
                annotator: a.annotator_id,
            });
        }
        if a.timestamp.is_none() {
            a.timestamp = Some(chrono::Utc::now().to_rfc3339());
        }
        let mut line = serde_json::to_string(&a).expect("annotations serialize");
        line.push('\n');
        let path = self.dir.join(ANNOTATIONS_FILE);
        inner.log.write_all(line.as_bytes()).map_err(io(&path))?;
        inner.log.flush().map_err(io(&path))?;
        inner.counts[i] += 1;
        inner.done.entry(a.annotator_id.clone()).or_default().insert(i);
        if inner.leases.get(&i).is_some_and(|(who, _)| *who == a.annotator_id) {
            inner.leases.remove(&i);
        }
        inner.annotations.push(a);
        Ok(())
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.inner.lock().expect("store lock").annotations.clone()
    }

    pub fn annotation_counts(&self) -> Vec<usize> {
        self.inner.lock().expect("store lock").counts.clone()
    }

    /// Analysis over a snapshot of the log.
    pub fn analysis(&self) -> Analysis {
        let snapshot = self.annotations();
        analyze(&self.tasks, &snapshot, self.policy.max_control_failures)
    }
}
