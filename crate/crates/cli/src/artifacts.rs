//! Output-directory bookkeeping: upstream lookups that name the producing
//! command, and per-command manifests with input and output checksums.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use annotrel_core::runner::sha256_hex;
use serde::Serialize;

use crate::error::CliError;

pub const CORPUS: &str = "corpus.jsonl";
pub const TRAIN: &str = "train.jsonl";
pub const EVAL: &str = "eval.jsonl";
pub const IMPORTANCE_JSON: &str = "importance.json";

pub struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    /// Reads an artifact some earlier command should have produced.
    pub fn read_upstream(&self, name: &str, command: &'static str, manifest: &mut Manifest) -> Result<Vec<u8>, CliError> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::MissingArtifact { path, command });
        }
        let bytes = read(&path)?;
        manifest.inputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn write(&self, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })?;
        manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T, manifest: &mut Manifest) -> Result<(), CliError> {
        self.write(name, &to_json(value)?, manifest)
    }

    pub fn finish(&self, manifest: &Manifest) -> Result<(), CliError> {
        let name = format!("manifest_{}.json", manifest.command);
        let path = self.path(&name);
        std::fs::write(&path, to_json(manifest)?).map_err(|source| CliError::Io { path, source })
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::stage("serializing JSON"))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Everything needed to re-create a command's outputs: the tool version, the
/// resolved configuration (including every seed) and checksums of what was
/// read and written. No timestamps, so identical runs give identical files.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub seeds: BTreeMap<&'static str, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub settings: serde_json::Value,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(command: &str, settings: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            settings,
            notes: BTreeMap::new(),
        }
    }

    /// Records a file read from outside the output directory.
    pub fn external_input(&mut self, label: &str, bytes: &[u8]) {
        self.inputs.insert(label.to_string(), sha256_hex(bytes));
    }
}
