//! TOML run configuration with `--set key=value` overrides.
//!
//! A config file holds an optional top-level `seed` and one table per
//! command (`[pretrain]`, `[eval]`, ...). Override keys are dotted paths.
//! `seed` and dotted paths starting with a command name are taken from the
//! document root; any other path is relative to the running command's table, so
//! `model.d_model=16` under `pretrain` sets `pretrain.model.d_model`.

use std::path::Path;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    doc: Table,
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

impl RawConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let doc = text
            .parse::<Table>()
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        Ok(Self { doc })
    }

    /// Applies one `key=value` override for `command`; `roots` are the
    /// top-level table names.
    pub fn set(&mut self, command: &str, roots: &[&str], assignment: &str) -> Result<(), CliError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects key=value, got `{assignment}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::Validation(format!("--set has an empty key in `{assignment}`")));
        }
        let mut path: Vec<&str> = key.split('.').collect();
        let rooted = key == "seed" || (path.len() > 1 && roots.contains(&path[0]));
        if !rooted {
            path.insert(0, command);
        }
        let (last, parents) = path.split_last().expect("non-empty path");
        let mut table = &mut self.doc;
        for p in parents {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Validation(format!("--set {key}: `{p}` is not a table")))?;
        }
        table.insert(last.to_string(), parse_value(raw.trim()));
        Ok(())
    }

    pub fn seed(&self) -> Result<Option<u64>, CliError> {
        match self.doc.get("seed") {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(CliError::Validation(format!("seed must be a non-negative integer, got {v}"))),
        }
    }

    /// Deserializes the command's table (missing table means all defaults).
    pub fn section<T: DeserializeOwned>(&self, command: &str) -> Result<T, CliError> {
        let table = match self.doc.get(command) {
            None => Table::new(),
            Some(Value::Table(t)) => t.clone(),
            Some(_) => return Err(CliError::Validation(format!("`{command}` must be a table"))),
        };
        T::deserialize(Value::Table(table)).map_err(|e| CliError::Validation(format!("[{command}]: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Section {
        steps: u64,
        lr: f64,
        name: String,
    }

    impl Default for Section {
        fn default() -> Self {
            Self {
                steps: 1,
                lr: 0.5,
                name: "x".into(),
            }
        }
    }

    const ROOTS: &[&str] = &["train", "eval"];

    #[test]
    fn overrides_land_in_command_table() {
        let mut c = RawConfig::default();
        c.set("train", ROOTS, "steps=20").unwrap();
        c.set("train", ROOTS, "train.lr=1e-3").unwrap();
        c.set("train", ROOTS, "name=model.ckpt").unwrap();
        c.set("train", ROOTS, "seed=9").unwrap();
        let s: Section = c.section("train").unwrap();
        assert_eq!(
            s,
            Section {
                steps: 20,
                lr: 1e-3,
                name: "model.ckpt".into()
            }
        );
        assert_eq!(c.seed().unwrap(), Some(9));
    }

    #[test]
    fn nested_paths_are_relative_unless_rooted() {
        let mut c = RawConfig::default();
        c.set("train", ROOTS, "model.width=16").unwrap();
        c.set("train", ROOTS, "eval.cutoff=10").unwrap();
        assert_eq!(c.doc["train"]["model"]["width"].as_integer(), Some(16));
        assert_eq!(c.doc["eval"]["cutoff"].as_integer(), Some(10));
        c.set("train", ROOTS, "eval=x.bin").unwrap();
        assert_eq!(c.doc["train"]["eval"].as_str(), Some("x.bin"));
        assert!(c.doc.get("model").is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = RawConfig::default();
        c.set("train", ROOTS, "stepz=3").unwrap();
        assert!(c.section::<Section>("train").is_err());
        assert!(c.set("train", ROOTS, "novalue").is_err());
    }
}
