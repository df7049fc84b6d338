use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::agents::{Agent, ExemplarAgent, ExemplarStore, RemoteAgent};
use crate::data_io::{self, DataError};

/// Line prefix an external trainer prints to report its checkpoint.
pub const CHECKPOINT_PREFIX: &str = "CHECKPOINT ";
pub const DEFAULT_TRAINER_TIMEOUT: Duration = Duration::from_secs(6 * 3600);

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("trainer exited with {status}: {stderr}")]
    Failed { status: String, stderr: String },
    #[error("trainer timed out after {0:?}")]
    Timeout(Duration),
    #[error("trainer printed no CHECKPOINT line")]
    NoCheckpoint,
    #[error("cannot start trainer {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone)]
pub struct TrainRequest<'a> {
    pub train: &'a Path,
    pub valid: &'a Path,
    pub init: Option<&'a Path>,
    pub schema_aware: bool,
    /// Directory the trainer may write its checkpoint into.
    pub out_dir: &'a Path,
}

/// Turns training files into a checkpoint, and checkpoints into agents.
/// One checkpoint serves both roles.
pub trait Trainer: Send + Sync {
    fn train(&self, req: &TrainRequest<'_>) -> Result<PathBuf, TrainerError>;
    fn load(&self, checkpoint: &Path) -> Result<Arc<dyn Agent>, TrainerError>;
}

/// Trains exemplar stores in process; checkpoints are store JSON files.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExemplarTrainer;

impl ExemplarTrainer {
    pub fn load_store(checkpoint: &Path) -> Result<ExemplarStore, TrainerError> {
        let bad = |reason: String| TrainerError::Checkpoint {
            path: checkpoint.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(checkpoint).map_err(|e| bad(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
    }

    pub fn save_store(store: &ExemplarStore, path: &Path) -> Result<(), TrainerError> {
        let bad = |e: std::io::Error| TrainerError::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(bad)?;
        }
        let text = serde_json::to_string(store).expect("stores serialize");
        std::fs::write(path, text).map_err(bad)
    }
}

impl Trainer for ExemplarTrainer {
    fn train(&self, req: &TrainRequest<'_>) -> Result<PathBuf, TrainerError> {
        let mut store = match req.init {
            Some(init) => Self::load_store(init)?,
            None => ExemplarStore::new(req.schema_aware),
        };
        let episodes = data_io::load_episodes(req.train)?;
        let added = store.absorb(&episodes);
        log::info!("exemplar store absorbed {added} episodes, {} entries", store.len());
        let name = if req.schema_aware { "schema_aware.json" } else { "schema_agnostic.json" };
        let path = req.out_dir.join(name);
        Self::save_store(&store, &path)?;
        Ok(path)
    }

    fn load(&self, checkpoint: &Path) -> Result<Arc<dyn Agent>, TrainerError> {
        Ok(Arc::new(ExemplarAgent::new(Arc::new(Self::load_store(checkpoint)?))))
    }
}

/// Runs an external program per training job and talks to the resulting
/// model through an agent server that accepts the checkpoint header.
#[derive(Debug, Clone)]
pub struct ExternalCommandTrainer {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
    pub agent_url: String,
}

impl ExternalCommandTrainer {
    /// `command` is split on whitespace into program and leading arguments.
    pub fn new(command: &str, agent_url: &str) -> Self {
        let mut parts = command.split_whitespace().map(str::to_string);
        Self {
            program: parts.next().unwrap_or_default(),
            args: parts.collect(),
            timeout: DEFAULT_TRAINER_TIMEOUT,
            agent_url: agent_url.to_string(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn command(&self, req: &TrainRequest<'_>) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .arg("--train")
            .arg(req.train)
            .arg("--valid")
            .arg(req.valid);
        if let Some(init) = req.init {
            cmd.arg("--init").arg(init);
        }
        cmd.args(["--role", "both", "--schema-aware", if req.schema_aware { "true" } else { "false" }])
            .current_dir(req.out_dir);
        cmd
    }
}

fn drain(mut pipe: impl Read + Send + 'static) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

impl Trainer for ExternalCommandTrainer {
    fn train(&self, req: &TrainRequest<'_>) -> Result<PathBuf, TrainerError> {
        std::fs::create_dir_all(req.out_dir).map_err(|e| TrainerError::Checkpoint {
            path: req.out_dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut child = self
            .command(req)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| TrainerError::Spawn {
                program: self.program.clone(),
                source,
            })?;
        let stdout = drain(child.stdout.take().expect("piped"));
        let stderr = drain(child.stderr.take().expect("piped"));
        let start = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait().map_err(|source| TrainerError::Spawn {
                program: self.program.clone(),
                source,
            })? {
                break status;
            }
            if start.elapsed() > self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(TrainerError::Timeout(self.timeout));
            }
            std::thread::sleep(Duration::from_millis(20));
        };
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();
        if !status.success() {
            return Err(TrainerError::Failed {
                status: status.to_string(),
                stderr: err.trim().to_string(),
            });
        }
        let line = out
            .lines()
            .rev()
            .find_map(|l| l.trim().strip_prefix(CHECKPOINT_PREFIX))
            .ok_or(TrainerError::NoCheckpoint)?;
        let path = PathBuf::from(line.trim());
        Ok(if path.is_absolute() { path } else { req.out_dir.join(path) })
    }

    fn load(&self, checkpoint: &Path) -> Result<Arc<dyn Agent>, TrainerError> {
        Ok(Arc::new(
            RemoteAgent::new(&self.agent_url).checkpoint(checkpoint.to_string_lossy()),
        ))
    }
}
