pub mod bootstrap;
pub mod data;
pub mod eval;
pub mod serve;
pub mod simulate;

use std::path::{Path, PathBuf};

use crate::error::CliError;

pub(crate) fn abs(p: &Option<PathBuf>) -> Option<PathBuf> {
    p.as_deref().map(crate::manifest_path)
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("values serialize");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}
