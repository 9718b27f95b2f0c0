//! Offline text-embedding cache shared by the content-based model.
//!
//! Binary layout, little-endian: `"KTEB"`, `u32` version, `u32` dim,
//! `u32` count, then `count` records of `u64` content id, `u8` kind, seven
//! zero pad bytes and `dim` `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"KTEB";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const RECORD_PREFIX: usize = 16;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("not an embedding cache (bad magic)")]
    BadMagic,
    #[error("unsupported embedding cache version {0}")]
    UnsupportedVersion(u32),
    #[error("vector of length {got}, cache dim is {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding cache truncated")]
    TruncatedFile,
    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),
    #[error("unknown content kind tag {0}")]
    BadKind(u8),
    #[error("non-finite value in {kind:?} vector {id}")]
    NonFinite { id: u64, kind: ContentKind },
    #[error("duplicate {kind:?} vector {id}")]
    Duplicate { id: u64, kind: ContentKind },
    #[error("dim must be positive")]
    ZeroDim,
    #[error("no {kind:?} embedding for question {question_id}")]
    MissingEmbedding { question_id: u32, kind: ContentKind },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum ContentKind {
    Question = 0,
    Construct = 1,
    Explanation = 2,
    Misconception = 3,
}

impl ContentKind {
    pub const ALL: [ContentKind; 4] = [
        ContentKind::Question,
        ContentKind::Construct,
        ContentKind::Explanation,
        ContentKind::Misconception,
    ];

    pub fn from_tag(tag: u8) -> Result<Self, EmbeddingError> {
        Self::ALL
            .get(tag as usize)
            .copied()
            .ok_or(EmbeddingError::BadKind(tag))
    }
}

/// Content vectors keyed by `(content id, kind)`.
///
/// Question, explanation and misconception vectors are keyed by question id;
/// construct vectors by construct id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCache {
    dim: usize,
    entries: BTreeMap<(u64, ContentKind), Vec<f32>>,
}

impl EmbeddingCache {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
        })
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

    pub fn insert(
        &mut self,
        id: u64,
        kind: ContentKind,
        v: Vec<f32>,
    ) -> Result<(), EmbeddingError> {
        if v.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite { id, kind });
        }
        self.entries.insert((id, kind), v);
        Ok(())
    }

    pub fn get(&self, id: u64, kind: ContentKind) -> Option<&[f32]> {
        self.entries.get(&(id, kind)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, ContentKind, &[f32])> {
        self.entries
            .iter()
            .map(|(&(id, k), v)| (id, k, v.as_slice()))
    }

    /// The four content vectors of a question, concatenated in kind order.
    pub fn question_features(
        &self,
        question_id: u32,
        construct_id: u32,
    ) -> Result<Vec<f32>, EmbeddingError> {
        let mut out = Vec::with_capacity(4 * self.dim);
        for kind in ContentKind::ALL {
            let id = match kind {
                ContentKind::Construct => construct_id as u64,
                _ => question_id as u64,
            };
            let v = self
                .get(id, kind)
                .ok_or(EmbeddingError::MissingEmbedding { question_id, kind })?;
            out.extend_from_slice(v);
        }
        Ok(out)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.entries.len() * (RECORD_PREFIX + 4 * self.dim)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (&(id, kind), v) in &self.entries {
            out.extend_from_slice(&id.to_le_bytes());
            out.push(kind as u8);
            out.extend_from_slice(&[0u8; 7]);
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        if bytes.len() < 4 {
            return Err(EmbeddingError::TruncatedFile);
        }
        if &bytes[..4] != EMBEDDING_MAGIC {
            return Err(EmbeddingError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(EmbeddingError::TruncatedFile);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != EMBEDDING_VERSION {
            return Err(EmbeddingError::UnsupportedVersion(version));
        }
        let dim = u32_at(8) as usize;
        let count = u32_at(12) as usize;
        let mut cache = Self::new(dim)?;
        let record = RECORD_PREFIX + 4 * dim;
        let mut off = HEADER_LEN;
        for _ in 0..count {
            let rec = bytes
                .get(off..off + record)
                .ok_or(EmbeddingError::TruncatedFile)?;
            let id = u64::from_le_bytes(rec[..8].try_into().expect("8 bytes"));
            let kind = ContentKind::from_tag(rec[8])?;
            let v = rec[RECORD_PREFIX..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if cache.entries.contains_key(&(id, kind)) {
                return Err(EmbeddingError::Duplicate { id, kind });
            }
            cache.insert(id, kind, v)?;
            off += record;
        }
        if off != bytes.len() {
            return Err(EmbeddingError::TrailingBytes(bytes.len() - off));
        }
        Ok(cache)
    }
}

pub fn save_embedding_cache(
    cache: &EmbeddingCache,
    path: impl AsRef<Path>,
) -> Result<(), EmbeddingError> {
    fs::write(path, cache.encode())?;
    Ok(())
}

pub fn load_embedding_cache(path: impl AsRef<Path>) -> Result<EmbeddingCache, EmbeddingError> {
    EmbeddingCache::decode(&fs::read(path)?)
}

/// Arithmetic mean of per-choice vectors, accumulated in `f64`.
pub fn mean_vector(vectors: &[&[f32]]) -> Option<Vec<f32>> {
    let first = vectors.first()?;
    let mut acc = vec![0.0f64; first.len()];
    for v in vectors {
        if v.len() != acc.len() {
            return None;
        }
        for (a, &x) in acc.iter_mut().zip(v.iter()) {
            *a += x as f64;
        }
    }
    let n = vectors.len() as f64;
    Some(acc.into_iter().map(|a| (a / n) as f32).collect())
}
