//! EMB1 embedding tables.
//!
//! Format (little-endian):
//! - magic `EMB1`
//! - entry_count: u32
//! - dim: u32
//! - entry_count × [id_len: u16 | id: UTF-8 | dim × f32]
//!
//! Entries are written sorted by id, so saving is byte-deterministic.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 12;
/// Base-size encoder output width.
pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic: expected EMB1")]
    BadMagic,
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("non-finite value in `{0}`")]
    NonFiniteValue(String),
    #[error("invalid id: {0}")]
    InvalidId(String),
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("missing embedding `{0}`")]
    MissingId(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cannot pool an empty list")]
    EmptyList,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmbeddingKind {
    FunctionText,
    FunctionVisual,
    Question,
    AnswerText,
    AnswerVisual,
}

impl EmbeddingKind {
    pub fn prefix(self) -> &'static str {
        match self {
            EmbeddingKind::FunctionText => "ft",
            EmbeddingKind::FunctionVisual => "fv",
            EmbeddingKind::Question => "q",
            EmbeddingKind::AnswerText => "at",
            EmbeddingKind::AnswerVisual => "av",
        }
    }

    fn from_prefix(s: &str) -> Option<Self> {
        Some(match s {
            "ft" => EmbeddingKind::FunctionText,
            "fv" => EmbeddingKind::FunctionVisual,
            "q" => EmbeddingKind::Question,
            "at" => EmbeddingKind::AnswerText,
            "av" => EmbeddingKind::AnswerVisual,
            _ => return None,
        })
    }
}

/// `<kind>:<video_id>:<local_id>`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmbeddingId {
    pub kind: EmbeddingKind,
    pub video_id: String,
    pub local_id: String,
}

impl EmbeddingId {
    pub fn new(kind: EmbeddingKind, video_id: impl Into<String>, local_id: impl Into<String>) -> Self {
        EmbeddingId { kind, video_id: video_id.into(), local_id: local_id.into() }
    }
}

impl fmt::Display for EmbeddingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind.prefix(), self.video_id, self.local_id)
    }
}

impl FromStr for EmbeddingId {
    type Err = EmbeddingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [kind, video_id, local_id] = parts[..] else {
            return Err(EmbeddingError::InvalidId(format!("`{s}` needs exactly two `:` separators")));
        };
        let kind = EmbeddingKind::from_prefix(kind)
            .ok_or_else(|| EmbeddingError::InvalidId(format!("unknown kind `{kind}` in `{s}`")))?;
        Ok(EmbeddingId::new(kind, video_id, local_id))
    }
}

/// Id → vector store. Vectors keep their on-disk `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(EmbeddingTable { dim, entries: BTreeMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<(), EmbeddingError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim, actual: vector.len() });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteValue(id));
        }
        if id.len() > u16::MAX as usize {
            return Err(EmbeddingError::InvalidId(format!("id longer than {} bytes", u16::MAX)));
        }
        if self.entries.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    /// Looks up a raw id string. Malformed ids are simply missing.
    pub fn get_raw(&self, id: &str) -> Result<&[f32], EmbeddingError> {
        self.entries.get(id).map(Vec::as_slice).ok_or_else(|| EmbeddingError::MissingId(id.to_string()))
    }

    pub fn get(&self, id: &EmbeddingId) -> Result<&[f32], EmbeddingError> {
        self.get_raw(&id.to_string())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body: usize = self.entries.keys().map(|id| 2 + id.len() + 4 * self.dim).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, vector) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(EmbeddingError::TruncatedFile("magic cut short".into()));
        }
        let mut reader = ByteReader { bytes, pos: 0 };
        let magic = reader.take(4).map_err(|_| EmbeddingError::BadMagic)?;
        if magic != MAGIC {
            return Err(EmbeddingError::BadMagic);
        }
        let count = reader.u32("entry count")? as usize;
        let dim = reader.u32("dim")? as usize;
        let mut table = EmbeddingTable::new(dim)?;

        let min_entry = 2 + 4 * dim;
        if reader.remaining() < count.saturating_mul(min_entry) {
            return Err(EmbeddingError::TruncatedFile(format!(
                "{count} entries of dim {dim} need at least {} bytes, found {}",
                count.saturating_mul(min_entry),
                reader.remaining()
            )));
        }

        for k in 0..count {
            let id_len = reader.u16("id length")? as usize;
            let id_bytes = reader.take(id_len).map_err(|_| trunc(k, "id"))?;
            let id = std::str::from_utf8(id_bytes)
                .map_err(|e| EmbeddingError::InvalidId(format!("entry {k}: {e}")))?
                .to_string();
            let raw = reader.take(4 * dim).map_err(|_| trunc(k, "vector"))?;
            let vector: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            table.insert(id, vector)?;
        }
        if reader.remaining() > 0 {
            return Err(EmbeddingError::TrailingBytes(reader.remaining()));
        }
        Ok(table)
    }
}

fn trunc(entry: usize, what: &str) -> EmbeddingError {
    EmbeddingError::TruncatedFile(format!("entry {entry}: {what} cut short"))
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ()> {
        if self.remaining() < n {
            return Err(());
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, EmbeddingError> {
        let b = self.take(4).map_err(|_| EmbeddingError::TruncatedFile(format!("missing {what}")))?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self, what: &str) -> Result<u16, EmbeddingError> {
        let b = self.take(2).map_err(|_| EmbeddingError::TruncatedFile(format!("missing {what}")))?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbeddingError> {
    EmbeddingTable::from_bytes(&std::fs::read(path)?)
}

pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    std::fs::write(path, table.to_bytes())?;
    Ok(())
}

/// Several tables searched in order, e.g. separate text and visual files with different widths.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingSet {
    tables: Vec<EmbeddingTable>,
}

impl EmbeddingSet {
    pub fn new(tables: Vec<EmbeddingTable>) -> Self {
        EmbeddingSet { tables }
    }

    pub fn tables(&self) -> &[EmbeddingTable] {
        &self.tables
    }

    pub fn get_raw(&self, id: &str) -> Result<&[f32], EmbeddingError> {
        self.tables.iter().find_map(|t| t.get_raw(id).ok()).ok_or_else(|| EmbeddingError::MissingId(id.to_string()))
    }

    /// Widened copy of a vector.
    pub fn get_f64(&self, id: &str) -> Result<Vec<f64>, EmbeddingError> {
        Ok(self.get_raw(id)?.iter().map(|&v| v as f64).collect())
    }
}

impl From<EmbeddingTable> for EmbeddingSet {
    fn from(table: EmbeddingTable) -> Self {
        EmbeddingSet { tables: vec![table] }
    }
}

/// Componentwise mean, used to pool per-frame vectors into one clip vector.
pub fn mean_pool<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::EmptyList)?.as_ref();
    let mut sum = vec![0.0; first.len()];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != sum.len() {
            return Err(EmbeddingError::DimensionMismatch { expected: sum.len(), actual: v.len() });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = vectors.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}
