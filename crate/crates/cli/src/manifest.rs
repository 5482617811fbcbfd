//! Output directories and their manifests.
//!
//! Each command writes into one directory and finishes by writing
//! `manifest.json` there. The manifest carries no timestamps and no absolute
//! paths, so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use judgeflow_core::corpus::SNAPSHOT_VERSION;
use judgeflow_core::fsio::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    /// False when the command stopped early or skipped records.
    pub complete: bool,
    pub config_sha256: String,
    pub params: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `parent/name`, enough to tell `agent-run/rankings.jsonl` from
/// `search-standard/rankings.jsonl` without recording where the run lived.
fn input_name(path: &Path) -> String {
    let name = path
        .file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    match path.parent().and_then(Path::file_name) {
        Some(parent) => format!("{}/{name}", parent.to_string_lossy()),
        None => name,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0} already holds the output of `{1}`; choose another --out")]
    Occupied(PathBuf, String),
}

/// An output directory being filled by one command.
pub struct OutputDir {
    dir: PathBuf,
    manifest: Manifest,
}

impl OutputDir {
    /// Creates `dir` if needed. A directory that already holds another
    /// command's manifest is refused; a previous run of the same command is
    /// cleared of the files its manifest lists.
    pub fn create(dir: &Path, command: &str, config_sha256: &str) -> Result<Self, OutputError> {
        let io_err = |source| OutputError::Io {
            path: dir.to_owned(),
            source,
        };
        fs::create_dir_all(dir).map_err(io_err)?;
        let existing = dir.join(MANIFEST_NAME);
        if let Ok(bytes) = fs::read(&existing) {
            let old: Option<Manifest> = serde_json::from_slice(&bytes).ok();
            match old {
                Some(m) if m.command == command => {
                    for f in &m.outputs {
                        let _ = fs::remove_file(dir.join(&f.name));
                    }
                }
                Some(m) => return Err(OutputError::Occupied(dir.to_owned(), m.command)),
                None => return Err(OutputError::Occupied(dir.to_owned(), "an unreadable manifest".into())),
            }
        }
        let mut versions = BTreeMap::new();
        versions.insert("judgeflow".to_owned(), env!("CARGO_PKG_VERSION").to_owned());
        versions.insert("store_format".to_owned(), SNAPSHOT_VERSION.to_string());
        Ok(Self {
            dir: dir.to_owned(),
            manifest: Manifest {
                manifest_version: MANIFEST_VERSION,
                command: command.to_owned(),
                complete: false,
                config_sha256: config_sha256.to_owned(),
                params: serde_json::Value::Null,
                seeds: BTreeMap::new(),
                versions,
                inputs: Vec::new(),
                outputs: Vec::new(),
                warnings: Vec::new(),
                errors: Vec::new(),
            },
        })
    }

    pub fn set_params(&mut self, params: serde_json::Value) {
        self.manifest.params = params;
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_owned(), value);
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::debug!("{msg}");
        self.manifest.warnings.push(msg);
    }

    pub fn warn_all(&mut self, msgs: impl IntoIterator<Item = String>) {
        for m in msgs {
            self.warn(m);
        }
    }

    pub fn error(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::error!("{msg}");
        self.manifest.errors.push(msg);
    }

    /// Records an input file by name and content hash.
    pub fn input_bytes(&mut self, path: &Path, bytes: &[u8]) {
        let entry = FileEntry {
            name: input_name(path),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        };
        if !self.manifest.inputs.contains(&entry) {
            self.manifest.inputs.push(entry);
        }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), OutputError> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).map_err(|source| OutputError::Io { path, source })?;
        self.manifest.outputs.retain(|f| f.name != name);
        self.manifest.outputs.push(FileEntry {
            name: name.to_owned(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Writes the manifest; `complete` is forced false when errors were
    /// recorded.
    pub fn finish(mut self, complete: bool) -> Result<Manifest, OutputError> {
        self.manifest.complete = complete && self.manifest.errors.is_empty();
        if !self.manifest.warnings.is_empty() {
            log::warn!(
                "{} warning(s) recorded in {}",
                self.manifest.warnings.len(),
                self.dir.join(MANIFEST_NAME).display()
            );
        }
        self.manifest.inputs.sort_by(|a, b| a.name.cmp(&b.name));
        self.manifest.outputs.sort_by(|a, b| a.name.cmp(&b.name));
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        let path = self.dir.join(MANIFEST_NAME);
        write_atomic(&path, &bytes).map_err(|source| OutputError::Io { path, source })?;
        Ok(self.manifest)
    }
}
