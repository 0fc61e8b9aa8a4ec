//! Run configuration: a TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use placement_core::model::ModelConfig;
use placement_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{read_text, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub steps: u64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Embedding table; labels missing from it (or everything, when unset)
    /// use seeded fallback vectors.
    pub embeddings: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 2000,
            checkpoint_every: 0,
            embeddings: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies overrides in order and
    /// validates. Every problem found is reported together.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => read_text(p)?
                .parse::<Table>()
                .map_err(|e| toml_error(p, &e))?,
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self> {
        let mut problems = Vec::new();
        unknown_keys(&table, &template(), "", &mut problems);
        if !problems.is_empty() {
            return Err(placement_core::Error::Validation(problems).into());
        }
        let config: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| {
                placement_core::Error::Validation(vec![e.message().to_string()])
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = match self.model.validate() {
            Err(placement_core::Error::Validation(p)) => p,
            Err(e) => vec![e.to_string()],
            Ok(()) => Vec::new(),
        };
        problems.extend(self.train.problems());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(placement_core::Error::Validation(problems).into())
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }
}

fn toml_error(path: &Path, e: &toml::de::Error) -> Error {
    let (line, column) = e
        .span()
        .map(|s| {
            let text = std::fs::read_to_string(path).unwrap_or_default();
            let before = &text[..s.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            (line, s.start - before.rfind('\n').map_or(0, |i| i + 1) + 1)
        })
        .unwrap_or((0, 0));
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: e.message().to_string(),
    }
}

/// Every key a config may contain, with optional fields filled in.
fn template() -> Table {
    let full = RunConfig {
        embeddings: Some(PathBuf::new()),
        ..RunConfig::default()
    };
    Table::try_from(&full).expect("default config serializes")
}

fn unknown_keys(given: &Table, known: &Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in given {
        let path = format!("{prefix}{key}");
        match (known.get(key), value) {
            (None, _) => out.push(format!("unknown key `{path}`")),
            (Some(Value::Table(k)), Value::Table(v)) => {
                unknown_keys(v, k, &format!("{path}."), out)
            }
            (Some(Value::Table(_)), _) => out.push(format!("`{path}` must be a table")),
            _ => {}
        }
    }
}

/// Applies `a.b.c=value`; the value is read as TOML, falling back to a
/// bare string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Usage(format!(
            "override `{assignment}` has an empty key"
        )));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut node = table;
    for part in parts {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Usage(format!("`{part}` in `{key}` is not a table"))),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}
