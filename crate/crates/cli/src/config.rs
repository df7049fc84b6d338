//! Config files are TOML with one table per subcommand:
//!
//! ```toml
//! [simulate]
//! goals = "data/goals.jsonl"
//! rollouts = 5
//! ```
//!
//! Flags given on the command line win over the file; the file wins over
//! built-in defaults.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::CliError;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(Self { table })
    }

    /// The `[name]` table as settings, or the defaults when absent.
    pub fn section<T: DeserializeOwned + Default>(&self, name: &str) -> Result<T, CliError> {
        match self.table.get(name) {
            None => Ok(T::default()),
            Some(value) => value
                .clone()
                .try_into()
                .map_err(|e| CliError::Usage(format!("config [{name}]: {e}"))),
        }
    }
}

/// Copies every `Some` flag of `$args` over the same-named field of `$settings`.
macro_rules! overlay {
    ($settings:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(
            if let Some(v) = $args.$field.clone() {
                $settings.$field = v.into();
            }
        )*
    };
}
pub(crate) use overlay;

/// Like [`overlay`] for optional settings.
macro_rules! overlay_opt {
    ($settings:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(
            if let Some(v) = $args.$field.clone() {
                $settings.$field = Some(v);
            }
        )*
    };
}
pub(crate) use overlay_opt;

pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing required setting --{flag}")))
}
