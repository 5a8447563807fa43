//! Embedding vectors, similarity, and the offline token-set embedder.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::ProviderError;
use crate::error::{ForgeError, Result};

/// Unit-norm vector stored sparsely as sorted `(dimension, value)` pairs.
///
/// Dense backends produce one entry per dimension; the token-set embedder
/// produces one entry per distinct token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    dim: u64,
    entries: Vec<(u64, f64)>,
}

impl EmbeddingVector {
    /// Normalizes a dense vector. A zero vector is rejected.
    pub fn from_dense(values: &[f64]) -> Result<Self, ProviderError> {
        let entries: Vec<(u64, f64)> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u64, *v))
            .collect();
        Self::normalized(values.len() as u64, entries)
    }

    fn normalized(dim: u64, mut entries: Vec<(u64, f64)>) -> Result<Self, ProviderError> {
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(ProviderError::Backend("zero or non-finite embedding".into()));
        }
        entries.sort_by_key(|(i, _)| *i);
        for (_, v) in entries.iter_mut() {
            *v /= norm;
        }
        Ok(EmbeddingVector { dim, entries })
    }

    pub fn dim(&self) -> u64 {
        self.dim
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }
}

/// Dot product of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim != b.dim {
        return Err(ForgeError::DimensionMismatch(a.dim as usize, b.dim as usize));
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.entries.len() && j < b.entries.len() {
        let (ia, va) = a.entries[i];
        let (ib, vb) = b.entries[j];
        match ia.cmp(&ib) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += va * vb;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(dot.clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    /// One unit vector per input; identical text yields identical vectors.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

/// Lower-cased alphanumeric tokens. Text without any falls back to its
/// trimmed lower-cased form so that every string has at least one token.
pub fn tokens(text: &str) -> BTreeSet<String> {
    let lower = text.to_lowercase();
    let set: BTreeSet<String> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    if set.is_empty() {
        BTreeSet::from([lower.trim().to_string()])
    } else {
        set
    }
}

/// Offline embedder: binary bag of tokens, normalized.
///
/// Cosine of two such vectors is `|A ∩ B| / sqrt(|A| |B|)` over the token
/// sets, so it is symmetric, in `[0, 1]`, and 1.0 exactly when the token
/// sets coincide.
#[derive(Debug, Clone, Default)]
pub struct TokenSetEmbedder;

/// FNV-1a, used only to place tokens on stable sparse dimensions.
fn token_dimension(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl TokenSetEmbedder {
    pub fn vector(text: &str) -> EmbeddingVector {
        let entries = tokens(text).iter().map(|t| (token_dimension(t), 1.0)).collect();
        EmbeddingVector::normalized(u64::MAX, entries).expect("at least one token")
    }

    /// Closed form of the cosine between two token-set vectors.
    pub fn similarity(a: &str, b: &str) -> f64 {
        let (ta, tb) = (tokens(a), tokens(b));
        let shared = ta.intersection(&tb).count() as f64;
        shared / ((ta.len() * tb.len()) as f64).sqrt()
    }
}

impl Embedder for TokenSetEmbedder {
    fn id(&self) -> &str {
        "token-set"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("empty embedding batch".into()));
        }
        Ok(texts.iter().map(|t| Self::vector(t)).collect())
    }
}

/// Embedder with explicit vectors per text, for tests that need exact
/// similarity values. Unknown text is a backend error.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    table: HashMap<String, EmbeddingVector>,
}

impl TableEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, text: &str, dense: &[f64]) -> Result<(), ProviderError> {
        self.table.insert(text.to_string(), EmbeddingVector::from_dense(dense)?);
        Ok(())
    }
}

impl Embedder for TableEmbedder {
    fn id(&self) -> &str {
        "table"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| ProviderError::Backend(format!("no vector for '{t}'")))
            })
            .collect()
    }
}

/// Memoizing similarity oracle over an embedder.
#[derive(Clone)]
pub struct SimilarityCache {
    embedder: Arc<dyn Embedder>,
    vectors: Arc<Mutex<HashMap<String, EmbeddingVector>>>,
}

impl SimilarityCache {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        SimilarityCache {
            embedder,
            vectors: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn token_set() -> Self {
        Self::new(Arc::new(TokenSetEmbedder))
    }

    /// Embeds every text not yet cached in one batch.
    pub fn prefetch<'a, I>(&self, texts: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let missing: Vec<String> = {
            let cache = self.vectors.lock().expect("cache lock");
            let mut seen = BTreeSet::new();
            texts
                .into_iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(*t))
                .map(str::to_string)
                .collect()
        };
        if missing.is_empty() {
            return Ok(());
        }
        let vecs = self.embedder.embed(&missing)?;
        if vecs.len() != missing.len() {
            return Err(ForgeError::LengthMismatch {
                what: "embedding batch",
                left: missing.len(),
                right: vecs.len(),
            });
        }
        let mut cache = self.vectors.lock().expect("cache lock");
        for (t, v) in missing.into_iter().zip(vecs) {
            cache.insert(t, v);
        }
        Ok(())
    }

    pub fn vector(&self, text: &str) -> Result<EmbeddingVector> {
        if let Some(v) = self.vectors.lock().expect("cache lock").get(text) {
            return Ok(v.clone());
        }
        self.prefetch([text])?;
        Ok(self.vectors.lock().expect("cache lock")[text].clone())
    }

    pub fn sim(&self, a: &str, b: &str) -> Result<f64> {
        if a == b {
            return Ok(1.0);
        }
        {
            let cache = self.vectors.lock().expect("cache lock");
            if let (Some(va), Some(vb)) = (cache.get(a), cache.get(b)) {
                return cosine_sim(va, vb);
            }
        }
        self.prefetch([a, b])?;
        let cache = self.vectors.lock().expect("cache lock");
        cosine_sim(&cache[a], &cache[b])
    }
}
