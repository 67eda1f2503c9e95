//! `MEMBED01` binary embedding store.
//!
//! ```text
//! offset  size        field
//! 0       8           magic "MEMBED01"
//! 8       4           dim   (u32, little-endian)
//! 12      8           rows  (u64, little-endian)
//! 20      rows*dim*4  values (f32, little-endian, row-major)
//! ```
//!
//! The payload starts at a 4-byte aligned offset, so on little-endian hosts a
//! memory-mapped file can be scanned in place without copying.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use memmap2::Mmap;
use thiserror::Error;

use crate::vector::{EmbeddingMatrix, VectorError};

pub const MAGIC: &[u8; 8] = b"MEMBED01";
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected MEMBED01")]
    BadMagic,
    #[error("truncated store: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("store has {extra} trailing bytes after the payload")]
    TrailingBytes { extra: u64 },
    #[error("header declares dim 0")]
    ZeroDim,
    #[error("header size overflows: {rows} rows of dim {dim}")]
    Overflow { rows: u64, dim: u32 },
    #[error("invalid embeddings: {0}")]
    Vector(#[from] VectorError),
}

/// Backing memory of an [`EmbeddingMatrix`].
pub(crate) enum Storage {
    Owned(Vec<f32>),
    Mapped { map: Mmap, rows_times_dim: usize },
}

impl Storage {
    pub(crate) fn mapped_bytes(&self) -> Option<&[u8]> {
        match self {
            Storage::Owned(_) => None,
            Storage::Mapped { map, .. } => Some(map),
        }
    }

    pub(crate) fn as_slice(&self) -> &[f32] {
        match self {
            Storage::Owned(v) => v,
            Storage::Mapped {
                map,
                rows_times_dim,
            } => {
                let payload = &map[HEADER_LEN..];
                // SAFETY: `map_store` only builds this variant on little-endian
                // targets after checking alignment and that the payload holds
                // exactly `rows_times_dim` f32 values. Every bit pattern is a
                // valid f32.
                unsafe {
                    std::slice::from_raw_parts(payload.as_ptr().cast::<f32>(), *rows_times_dim)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub dim: u32,
    pub rows: u64,
}

impl Header {
    pub fn parse(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::Truncated {
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        Ok(Self { dim, rows })
    }

    /// Total file length implied by the header.
    pub fn file_len(&self) -> Result<u64, StoreError> {
        self.rows
            .checked_mul(u64::from(self.dim))
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN as u64))
            .ok_or(StoreError::Overflow {
                rows: self.rows,
                dim: self.dim,
            })
    }

    fn check_len(&self, actual: u64) -> Result<(), StoreError> {
        let expected = self.file_len()?;
        match actual.cmp(&expected) {
            std::cmp::Ordering::Less => Err(StoreError::Truncated { expected, actual }),
            std::cmp::Ordering::Greater => Err(StoreError::TrailingBytes {
                extra: actual - expected,
            }),
            std::cmp::Ordering::Equal => Ok(()),
        }
    }
}

/// Decodes a complete store image held in memory.
pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingMatrix, StoreError> {
    let header = Header::parse(bytes)?;
    header.check_len(bytes.len() as u64)?;
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(EmbeddingMatrix::new(header.dim as usize, values)?)
}

/// Reads a store fully into memory.
pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, StoreError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_store(&bytes)
}

/// Memory-maps a store. Falls back to an owned copy on big-endian targets.
///
/// The file must not be modified while the returned matrix is alive.
pub fn map_store(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, StoreError> {
    let file = File::open(path)?;
    // SAFETY: the mapping is read-only; callers are told not to mutate the
    // file concurrently.
    let map = unsafe { Mmap::map(&file)? };
    let header = Header::parse(&map)?;
    header.check_len(map.len() as u64)?;
    let rows_times_dim = (header.rows * u64::from(header.dim)) as usize;

    let aligned = (map.as_ptr() as usize + HEADER_LEN).is_multiple_of(std::mem::align_of::<f32>());
    if cfg!(target_endian = "little") && aligned {
        Ok(EmbeddingMatrix::from_storage(
            header.dim as usize,
            Storage::Mapped {
                map,
                rows_times_dim,
            },
        )?)
    } else {
        decode_store(&map)
    }
}

pub fn encode_header(dim: usize, rows: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(MAGIC);
    h[8..12].copy_from_slice(&(dim as u32).to_le_bytes());
    h[12..20].copy_from_slice(&(rows as u64).to_le_bytes());
    h
}

pub fn write_store_to<W: Write>(w: &mut W, matrix: &EmbeddingMatrix) -> std::io::Result<()> {
    w.write_all(&encode_header(matrix.dim(), matrix.rows()))?;
    for v in matrix.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_store(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<(), StoreError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_store_to(&mut w, matrix)?;
    w.flush()?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}
