//! Layered configuration: command-line flags over a TOML file over defaults.

use std::path::Path;

use lvc_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

/// Reads a TOML file, or returns an empty table when no file is given.
pub fn load_file(path: Option<&Path>) -> Result<Table> {
    let Some(path) = path else {
        return Ok(Table::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

/// The `[name]` table of a configuration file (empty when absent).
pub fn section(file: &Table, name: &str) -> Result<Table> {
    match file.get(name) {
        None => Ok(Table::new()),
        Some(Value::Table(t)) => Ok(t.clone()),
        Some(_) => Err(Error::InvalidInput(format!("config key `{name}` must be a table"))),
    }
}

/// Collects the flags that were actually given.
#[derive(Default)]
pub struct Flags(Table);

impl Flags {
    pub fn set<T: Into<Value>>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(key.to_string(), v.into());
        }
        self
    }
}

/// Merges `defaults`, then `file`, then `flags`. Every key in `required` must
/// come from the file or a flag.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: &Table,
    flags: &Flags,
    required: &[&str],
    section_name: &str,
) -> Result<T> {
    for key in required {
        if !file.contains_key(*key) && !flags.0.contains_key(*key) {
            return Err(Error::InvalidInput(format!(
                "missing config key `{key}`: set it in the [{section_name}] table or pass --{}",
                key.replace('_', "-")
            )));
        }
    }
    let mut merged = match Value::try_from(defaults) {
        Ok(Value::Table(t)) => t,
        _ => Table::new(),
    };
    for (k, v) in file.iter().chain(flags.0.iter()) {
        merged.insert(k.clone(), v.clone());
    }
    Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::InvalidInput(format!("[{section_name}] {}", e.message())))
}
