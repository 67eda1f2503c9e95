//! Layout of a run directory.
//!
//! ```text
//! <run>/config.json      RunManifest
//! <run>/captions.json    caption ids audited
//! <run>/outcomes.jsonl   checkpoint, one outcome per line
//! <run>/records.json     final per-(caption, strategy) records
//! <run>/images/          content-addressed generated images
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AuditConfig, PromptAuditRecord};
use crate::backend::images::ImageStore;
use crate::backend::BackendDescriptor;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRef {
    pub manifest: PathBuf,
    pub store: PathBuf,
    /// sha256 over manifest bytes then store bytes.
    pub digest: String,
}

/// Everything needed to reproduce or resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    pub tool_version: String,
    pub command_line: Vec<String>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub config: AuditConfig,
    /// The `--backend` argument as given.
    pub backend_selector: String,
    pub backend: BackendDescriptor,
    pub corpus: CorpusRef,
    pub template_digests: BTreeMap<String, String>,
    /// Free-form notes on choices that affect interpretation of results.
    pub assumptions: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn captions_path(&self) -> PathBuf {
        self.root.join("captions.json")
    }

    pub fn outcomes_path(&self) -> PathBuf {
        self.root.join("outcomes.jsonl")
    }

    pub fn records_path(&self) -> PathBuf {
        self.root.join("records.json")
    }

    pub fn images(&self) -> ImageStore {
        ImageStore::new(self.root.join("images"))
    }

    /// Creates the directory for a fresh run. Refuses to reuse one that
    /// already holds a run.
    pub fn create(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.root)?;
        if self.config_path().exists() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!(
                    "{} already holds a run; use --resume to continue it",
                    self.root.display()
                ),
            ));
        }
        Ok(())
    }

    pub fn write_manifest(&self, m: &RunManifest) -> std::io::Result<()> {
        write_json_atomic(&self.config_path(), m)
    }

    pub fn read_manifest(&self) -> std::io::Result<RunManifest> {
        read_json(&self.config_path())
    }

    pub fn write_captions(&self, ids: &[String]) -> std::io::Result<()> {
        write_json_atomic(&self.captions_path(), &ids)
    }

    pub fn read_captions(&self) -> std::io::Result<Vec<String>> {
        read_json(&self.captions_path())
    }

    pub fn write_records(&self, records: &[PromptAuditRecord]) -> std::io::Result<()> {
        write_json_atomic(&self.records_path(), &records)
    }

    pub fn read_records(&self) -> std::io::Result<Vec<PromptAuditRecord>> {
        read_json(&self.records_path())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> std::io::Result<T> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}: {e}", path.display()),
        )
    })
}

/// Pretty-prints `value` to a temporary sibling and renames it into place.
pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, value)?;
    tmp.write_all(b"\n")?;
    tmp.as_file().sync_data()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
