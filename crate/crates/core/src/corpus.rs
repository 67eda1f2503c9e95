//! The caption-image training corpus: a JSON-lines manifest paired with a
//! `MEMBED01` embedding store whose row `i` embeds manifest line `i`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sampling;
use crate::store::{self, StoreError};
use crate::vector::{EmbeddingMatrix, EmbeddingVector, VectorError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("embedding store: {0}")]
    Store(StoreError),
    #[error("manifest has {manifest} records but the store has {rows} rows")]
    CountMismatch { manifest: usize, rows: usize },
    #[error("duplicate record id {id:?} on manifest line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("embedding row {row} is not unit norm (norm {norm:.6})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("cannot sample {n} records from a corpus of {len}")]
    SampleTooLarge { n: usize, len: usize },
    #[error("sample size must be positive")]
    EmptySample,
    #[error("invalid embeddings: {0}")]
    Vector(VectorError),
}

impl From<StoreError> for CorpusError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Vector(v) => v.into(),
            StoreError::Io(io) => CorpusError::Io(io),
            other => CorpusError::Store(other),
        }
    }
}

impl From<VectorError> for CorpusError {
    fn from(e: VectorError) -> Self {
        match e {
            VectorError::NotNormalized { row, norm } => CorpusError::NotNormalized { row, norm },
            other => CorpusError::Vector(other),
        }
    }
}

/// Manifest line as it appears on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    caption: String,
    image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub record_id: String,
    pub caption: String,
    pub image_ref: String,
    pub embedding_row: usize,
}

#[derive(Debug)]
pub struct CorpusIndex {
    records: Vec<CorpusRecord>,
    embeddings: EmbeddingMatrix,
    source_digest: String,
    by_id: HashMap<String, usize>,
    by_caption: HashMap<String, usize>,
}

fn parse_line(bytes: &[u8], line: usize) -> Result<ManifestLine, CorpusError> {
    let entry: ManifestLine = serde_json::from_slice(bytes).map_err(|e| CorpusError::Format {
        line,
        message: e.to_string(),
    })?;
    if entry.caption.trim().is_empty() {
        return Err(CorpusError::Format {
            line,
            message: "caption is empty".into(),
        });
    }
    if entry.id.is_empty() {
        return Err(CorpusError::Format {
            line,
            message: "id is empty".into(),
        });
    }
    Ok(entry)
}

fn manifest_bytes(records: &[CorpusRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        let line = ManifestLine {
            id: r.record_id.clone(),
            caption: r.caption.clone(),
            image_ref: r.image_ref.clone(),
        };
        serde_json::to_writer(&mut out, &line).expect("manifest line serializes");
        out.push(b'\n');
    }
    out
}

/// Loads and validates a corpus.
///
/// The digest is the hex SHA-256 of the manifest bytes followed by the store
/// bytes, i.e. `cat manifest store | sha256sum`.
pub fn load_corpus(
    manifest_path: impl AsRef<Path>,
    store_path: impl AsRef<Path>,
) -> Result<CorpusIndex, CorpusError> {
    let mut hasher = Sha256::new();
    let mut reader = BufReader::new(File::open(manifest_path)?);
    let mut entries = Vec::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        hasher.update(&buf);
        let line = entries.len();
        let content = buf.strip_suffix(b"\n").unwrap_or(&buf);
        let content = content.strip_suffix(b"\r").unwrap_or(content);
        entries.push(parse_line(content, line)?);
    }

    let embeddings = store::map_store(&store_path)?;
    match embeddings.mapped_bytes() {
        Some(bytes) => hasher.update(bytes),
        None => {
            let mut file = File::open(&store_path)?;
            let mut chunk = vec![0u8; 1 << 20];
            loop {
                let n = file.read(&mut chunk)?;
                if n == 0 {
                    break;
                }
                hasher.update(&chunk[..n]);
            }
        }
    }
    let digest = hex::encode(hasher.finalize());

    let records = entries
        .into_iter()
        .enumerate()
        .map(|(row, e)| CorpusRecord {
            record_id: e.id,
            caption: e.caption,
            image_ref: e.image_ref,
            embedding_row: row,
        })
        .collect();
    CorpusIndex::assemble(records, embeddings, digest)
}

/// Writes the manifest and store for `corpus`.
pub fn write_corpus(
    corpus: &CorpusIndex,
    manifest_path: impl AsRef<Path>,
    store_path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(manifest_path)?);
    w.write_all(&manifest_bytes(&corpus.records))?;
    w.flush()?;
    store::write_store(store_path, &corpus.embeddings)?;
    Ok(())
}

impl CorpusIndex {
    fn assemble(
        records: Vec<CorpusRecord>,
        embeddings: EmbeddingMatrix,
        source_digest: String,
    ) -> Result<Self, CorpusError> {
        if records.len() != embeddings.rows() {
            return Err(CorpusError::CountMismatch {
                manifest: records.len(),
                rows: embeddings.rows(),
            });
        }
        let mut by_id = HashMap::with_capacity(records.len());
        let mut by_caption = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.record_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    id: r.record_id.clone(),
                    line: i,
                });
            }
            by_caption.entry(r.caption.clone()).or_insert(i);
        }
        Ok(Self {
            records,
            embeddings,
            source_digest,
            by_id,
            by_caption,
        })
    }

    /// Builds an in-memory corpus from `(id, caption, image_ref)` triples and
    /// a matching matrix. The digest is the one the written files would have.
    pub fn from_parts(
        entries: Vec<(String, String, String)>,
        embeddings: EmbeddingMatrix,
    ) -> Result<Self, CorpusError> {
        let records: Vec<CorpusRecord> = entries
            .into_iter()
            .enumerate()
            .map(|(row, (id, caption, image_ref))| CorpusRecord {
                record_id: id,
                caption,
                image_ref,
                embedding_row: row,
            })
            .collect();
        for (line, r) in records.iter().enumerate() {
            if r.caption.trim().is_empty() {
                return Err(CorpusError::Format {
                    line,
                    message: "caption is empty".into(),
                });
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(manifest_bytes(&records));
        let mut store_bytes = Vec::new();
        store::write_store_to(&mut store_bytes, &embeddings)?;
        hasher.update(&store_bytes);
        let digest = hex::encode(hasher.finalize());
        Self::assemble(records, embeddings, digest)
    }

    /// A corpus of `n` distinct captions with random unit embeddings.
    pub fn synthetic(n: usize, dim: usize, seed: u64) -> Result<Self, CorpusError> {
        const SUBJECTS: [&str; 8] = [
            "lighthouse",
            "teapot",
            "fox",
            "violin",
            "cathedral",
            "sailboat",
            "orchid",
            "tram",
        ];
        const SETTINGS: [&str; 6] = [
            "at dawn",
            "in the rain",
            "on a wooden table",
            "under neon lights",
            "in winter",
            "by the sea",
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Vec::with_capacity(n);
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let values: Vec<f32> = (0..dim)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x as f32
                })
                .collect();
            vectors.push(EmbeddingVector::new(values)?);
            entries.push((
                format!("rec-{i:06}"),
                format!(
                    "a photo of a {} {} number {i}",
                    SUBJECTS[i % SUBJECTS.len()],
                    SETTINGS[(i / SUBJECTS.len()) % SETTINGS.len()]
                ),
                format!("images/{i:06}.png"),
            ));
        }
        let matrix = if n == 0 {
            EmbeddingMatrix::new(dim.max(1), Vec::new())?
        } else {
            EmbeddingMatrix::from_vectors(&vectors)?
        };
        Self::from_parts(entries, matrix)
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn get(&self, record_id: &str) -> Option<&CorpusRecord> {
        self.by_id.get(record_id).map(|&i| &self.records[i])
    }

    /// Position of a record in corpus order.
    pub fn position(&self, record_id: &str) -> Option<usize> {
        self.by_id.get(record_id).copied()
    }

    /// First record (in corpus order) carrying exactly this caption.
    pub fn find_by_caption(&self, caption: &str) -> Option<&CorpusRecord> {
        self.by_caption.get(caption).map(|&i| &self.records[i])
    }

    pub fn embedding_of(&self, record: &CorpusRecord) -> EmbeddingVector {
        self.embeddings.row_vector(record.embedding_row)
    }
}

/// Draws `n` distinct records uniformly without replacement.
///
/// The result is in draw order and depends only on `(corpus size, n, seed)`.
pub fn sample_captions(
    corpus: &CorpusIndex,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<&CorpusRecord>, CorpusError> {
    if n == 0 {
        return Err(CorpusError::EmptySample);
    }
    if n > corpus.len() {
        return Err(CorpusError::SampleTooLarge {
            n,
            len: corpus.len(),
        });
    }
    Ok(sampling::sample_indices(corpus.len(), n, rng_seed)
        .into_iter()
        .map(|i| &corpus.records[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn write_fixture(
        dir: &Path,
        lines: &[&str],
        rows: usize,
        dim: usize,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let manifest = dir.join("corpus.jsonl");
        let store_path = dir.join("corpus.membed");
        let mut text = String::new();
        for l in lines {
            text.push_str(l);
            text.push('\n');
        }
        std::fs::write(&manifest, text).unwrap();
        let mut data = vec![0.0f32; rows * dim];
        for r in 0..rows {
            data[r * dim + r % dim] = 1.0;
        }
        store::write_store(&store_path, &EmbeddingMatrix::new(dim, data).unwrap()).unwrap();
        (manifest, store_path)
    }

    const THREE: [&str; 3] = [
        r#"{"id":"a","caption":"a red apple","image_ref":"img/a.png"}"#,
        r#"{"id":"b","caption":"a blue car","image_ref":"img/b.png"}"#,
        r#"{"id":"c","caption":"a green hill","image_ref":"img/c.png"}"#,
    ];

    #[test]
    fn loads_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let (m, s) = write_fixture(dir.path(), &THREE, 3, 8);
        let c = load_corpus(&m, &s).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.dim(), 8);
        assert_eq!(c.get("b").unwrap().embedding_row, 1);
        assert_eq!(c.find_by_caption("a green hill").unwrap().record_id, "c");
        assert_eq!(c.source_digest().len(), 64);
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (m, s) = write_fixture(dir.path(), &THREE, 4, 8);
        assert!(matches!(
            load_corpus(&m, &s),
            Err(CorpusError::CountMismatch {
                manifest: 3,
                rows: 4
            })
        ));
    }

    #[test]
    fn duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let lines = [THREE[0], THREE[1], THREE[0]];
        let (m, s) = write_fixture(dir.path(), &lines, 3, 8);
        assert!(matches!(
            load_corpus(&m, &s),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        for bad in [
            "not json",
            r#"{"id":"x","caption":"c"}"#,
            r#"{"id":"x","caption":"c","image_ref":"r","extra":1}"#,
            r#"{"id":"x","caption":"  ","image_ref":"r"}"#,
        ] {
            let lines = [THREE[0], bad, THREE[2]];
            let (m, s) = write_fixture(dir.path(), &lines, 3, 8);
            assert!(
                matches!(
                    load_corpus(&m, &s),
                    Err(CorpusError::Format { line: 1, .. })
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn bad_store_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (m, s) = write_fixture(dir.path(), &THREE, 3, 8);
        let mut bytes = std::fs::read(&s).unwrap();
        bytes[0] = b'X';
        std::fs::write(&s, bytes).unwrap();
        assert!(matches!(
            load_corpus(&m, &s),
            Err(CorpusError::Store(StoreError::BadMagic))
        ));
    }

    #[test]
    fn rejects_non_unit_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (m, s) = write_fixture(dir.path(), &THREE, 3, 4);
        let mut bytes = std::fs::read(&s).unwrap();
        // row 2, component 2 becomes 1.01
        let off = store::HEADER_LEN + (2 * 4 + 2) * 4;
        bytes[off..off + 4].copy_from_slice(&1.01f32.to_le_bytes());
        std::fs::write(&s, bytes).unwrap();
        assert!(matches!(
            load_corpus(&m, &s),
            Err(CorpusError::NotNormalized { row: 2, .. })
        ));
    }

    #[test]
    fn sample_errors_and_exhaustive() {
        let c = CorpusIndex::synthetic(10, 4, 1).unwrap();
        assert!(matches!(
            sample_captions(&c, 11, 0),
            Err(CorpusError::SampleTooLarge { n: 11, len: 10 })
        ));
        assert!(matches!(
            sample_captions(&c, 0, 0),
            Err(CorpusError::EmptySample)
        ));
        let all = sample_captions(&c, 10, 3).unwrap();
        let ids: HashSet<&str> = all.iter().map(|r| r.record_id.as_str()).collect();
        assert_eq!(ids.len(), 10);
        let again = sample_captions(&c, 10, 3).unwrap();
        assert_eq!(all, again);
    }

    #[test]
    fn in_memory_digest_matches_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = CorpusIndex::synthetic(25, 6, 4).unwrap();
        let m = dir.path().join("m.jsonl");
        let s = dir.path().join("s.membed");
        write_corpus(&c, &m, &s).unwrap();
        let loaded = load_corpus(&m, &s).unwrap();
        assert_eq!(loaded.source_digest(), c.source_digest());
    }
}
