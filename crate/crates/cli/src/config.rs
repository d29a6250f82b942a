//! Configuration resolution and run manifests.
//!
//! Precedence is flag > config-file entry > built-in default. The fully
//! resolved configuration of every run is persisted as a `manifest` next to
//! the outputs so any result can be reproduced from its manifest alone.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use capstraffic_core::data::DataError;
use capstraffic_core::eval::EvalError;
use capstraffic_core::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or config values; maps to exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Everything that goes wrong after the command line was valid; exit 1.
    #[error("{0}")]
    Runtime(String),
    /// Parameter audit found a deviation; exit 1 without extra noise.
    #[error("parameter audit found deviations")]
    AuditMismatch,
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<capstraffic_core::TensorError> for CliError {
    fn from(e: capstraffic_core::TensorError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

/// Key=value configuration file. Lines starting with `#` and blank lines are
/// ignored; keys match the long flag names (for example `lr0 = 0.0005`).
#[derive(Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    idx + 1
                )));
            };
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { entries })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config value {key}={raw} cannot be parsed"))),
        }
    }

    /// flag > config > default.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(flag.or(self.get(key)?).unwrap_or(default))
    }

    /// flag > config, no default: the value must come from somewhere.
    pub fn resolve_required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        flag.or(self.get(key)?)
            .ok_or_else(|| CliError::Usage(format!("missing required value '{key}' (flag or config file)")))
    }
}

/// Writes the resolved configuration as sorted key=value lines.
pub fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<(), CliError> {
    let mut sorted: Vec<&(&str, String)> = entries.iter().collect();
    sorted.sort_by_key(|(k, _)| *k);
    let mut out = fs::File::create(path)?;
    for (key, value) in sorted {
        writeln!(out, "{key}={value}")?;
    }
    Ok(())
}

pub fn entry(key: &'static str, value: impl Display) -> (&'static str, String) {
    (key, value.to_string())
}
