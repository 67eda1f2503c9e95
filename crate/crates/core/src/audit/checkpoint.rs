//! Append-only JSON-lines checkpoint of generation outcomes.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::GenerationOutcome;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
    #[error("line {line} holds cell {found}, expected {expected}")]
    Mismatch {
        line: usize,
        expected: String,
        found: String,
    },
}

/// Reads every complete outcome. A torn final line (no trailing newline, or
/// unparsable and last) is dropped; the returned length is the byte offset
/// where valid content ends.
pub fn read_checkpoint(path: &Path) -> Result<(Vec<GenerationOutcome>, u64), CheckpointError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    };
    let mut outcomes = Vec::new();
    let mut offset = 0usize;
    let mut line = 0usize;
    while offset < bytes.len() {
        let Some(end) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            log::warn!("dropping torn checkpoint line {line}");
            break;
        };
        let text = &bytes[offset..offset + end];
        match serde_json::from_slice::<GenerationOutcome>(text) {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                let is_last = offset + end + 1 >= bytes.len();
                if is_last {
                    log::warn!("dropping unparsable final checkpoint line {line}");
                    break;
                }
                return Err(CheckpointError::Corrupt {
                    line,
                    message: e.to_string(),
                });
            }
        }
        offset += end + 1;
        line += 1;
    }
    Ok((outcomes, offset as u64))
}

pub(super) struct CheckpointWriter {
    out: BufWriter<File>,
}

impl CheckpointWriter {
    /// Opens `path` for appending after cutting it to `valid_len` bytes.
    pub(super) fn open(path: &Path, valid_len: u64) -> std::io::Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)?;
        file.set_len(valid_len)?;
        let mut out = BufWriter::new(file);
        std::io::Seek::seek(&mut out, std::io::SeekFrom::End(0))?;
        Ok(Self { out })
    }

    /// Appends a batch and syncs it to disk.
    pub(super) fn append(&mut self, batch: &[GenerationOutcome]) -> std::io::Result<()> {
        for o in batch {
            serde_json::to_writer(&mut self.out, o)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendError;
    use crate::prompts::StrategyId;

    fn outcome(seed: u64) -> GenerationOutcome {
        GenerationOutcome::failure("c", StrategyId::Baseline, seed, &BackendError::EmptyInput)
    }

    #[test]
    fn missing_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let (o, len) = read_checkpoint(&dir.path().join("none.jsonl")).unwrap();
        assert!(o.is_empty());
        assert_eq!(len, 0);
    }

    #[test]
    fn torn_tail_is_dropped_and_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("outcomes.jsonl");
        let mut w = CheckpointWriter::open(&path, 0).unwrap();
        w.append(&[outcome(0), outcome(1)]).unwrap();
        drop(w);
        let full = std::fs::read(&path).unwrap();
        let mut torn = full.clone();
        torn.extend_from_slice(b"{\"caption_id\":\"c\",\"stra");
        std::fs::write(&path, &torn).unwrap();

        let (o, len) = read_checkpoint(&path).unwrap();
        assert_eq!(o, vec![outcome(0), outcome(1)]);
        assert_eq!(len as usize, full.len());

        let mut w = CheckpointWriter::open(&path, len).unwrap();
        w.append(&[outcome(2)]).unwrap();
        drop(w);
        let (o, _) = read_checkpoint(&path).unwrap();
        assert_eq!(o, vec![outcome(0), outcome(1), outcome(2)]);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("outcomes.jsonl");
        let good = serde_json::to_string(&outcome(0)).unwrap();
        std::fs::write(&path, format!("{good}\ngarbage\n{good}\n")).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(CheckpointError::Corrupt { line: 1, .. })
        ));
    }
}
