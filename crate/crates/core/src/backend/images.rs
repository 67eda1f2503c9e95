//! Content-addressed image storage under a run directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub fn content_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stores image bytes at `<root>/<first two hex chars>/<digest>`.
#[derive(Debug, Clone)]
pub struct ImageStore {
    root: PathBuf,
}

impl ImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.root.join(&digest[..2.min(digest.len())]).join(digest)
    }

    /// Writes `bytes` unless an object with the same digest already exists.
    pub fn put(&self, bytes: &[u8]) -> std::io::Result<String> {
        let digest = content_digest(bytes);
        let path = self.path_for(&digest);
        if path.exists() {
            return Ok(digest);
        }
        let dir = path.parent().expect("object path has a parent");
        fs::create_dir_all(dir)?;
        // Rename into place so concurrent writers of the same object never
        // expose a partial file.
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(digest)
    }

    pub fn get(&self, digest: &str) -> std::io::Result<Vec<u8>> {
        fs::read(self.path_for(digest))
    }
}
