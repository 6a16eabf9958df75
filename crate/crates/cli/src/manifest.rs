use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TOOL_VERSION: &str = concat!("sdr ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| sdr_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Provenance record written next to a command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Inputs read and outputs written by one command run.
#[derive(Debug, Default)]
pub struct Artifacts {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    manifest: Option<PathBuf>,
}

impl Artifacts {
    /// Records an input; it must exist.
    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let path = path.as_ref().to_path_buf();
        if !path.is_file() {
            return Err(CliError::Validation(format!("input {} does not exist", path.display())));
        }
        if !self.inputs.contains(&path) {
            self.inputs.push(path.clone());
        }
        Ok(path)
    }

    /// Records an output before it is written. Outputs may not overwrite inputs.
    pub fn output(&mut self, path: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let path = path.as_ref().to_path_buf();
        if self.inputs.iter().any(|i| same_file(i, &path)) {
            return Err(CliError::Validation(format!(
                "output {} would overwrite an input",
                path.display()
            )));
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| sdr_core::Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        if !self.outputs.contains(&path) {
            self.outputs.push(path.clone());
        }
        Ok(path)
    }

    pub fn set_manifest_path(&mut self, path: impl AsRef<Path>) {
        self.manifest = Some(path.as_ref().to_path_buf());
    }

    /// Deletes every recorded output (and the manifest) that exists.
    pub fn remove_outputs(&self) -> Vec<String> {
        let mut removed = Vec::new();
        for p in self.outputs.iter().chain(&self.manifest) {
            if p.is_file() && fs::remove_file(p).is_ok() {
                removed.push(p.display().to_string());
            }
        }
        removed
    }

    pub fn write_manifest<C: Serialize>(
        &mut self,
        command: &str,
        seed: Option<u64>,
        config: &C,
    ) -> Result<PathBuf, CliError> {
        let config = serde_json::to_value(config).expect("config serializes");
        let canonical = serde_json::json!({ "command": command, "seed": seed, "config": config });
        let config_hash = sha256_hex(canonical.to_string().as_bytes());
        let digest_all = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>, CliError> {
            paths
                .iter()
                .map(|p| Ok((p.display().to_string(), file_digest(p)?)))
                .collect()
        };
        let manifest = Manifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION,
            seed,
            config_hash,
            config,
            inputs: digest_all(&self.inputs)?,
            outputs: digest_all(&self.outputs)?,
        };
        let path = self
            .manifest
            .clone()
            .or_else(|| self.outputs.first().map(|p| with_suffix(p, ".manifest.json")))
            .ok_or_else(|| CliError::Runtime("command produced no outputs".into()))?;
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| sdr_core::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        self.manifest = Some(path.clone());
        Ok(path)
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}
