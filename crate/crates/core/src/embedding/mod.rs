//! Text embeddings and their projection onto field coordinates.

mod local;
mod projection;
mod remote;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use local::{LocalEmbedder, LOCAL_DIMENSION};
pub use projection::{project, FieldPosition, Projector, SQUASH_SCALE};
pub use remote::{RemoteConfig, RemoteEmbedder};

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalize `values` to unit L2 norm. Fails on empty, non-finite, or zero input.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ProviderUnavailable(
                "embedding contains no values or non-finite values".into(),
            ));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(Error::ProviderUnavailable("embedding has zero norm".into()));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wrap values as-is. Used when restoring persisted vectors, which were
    /// normalized when first produced.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.0, &other.0)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    DeterministicLocal,
    Remote,
    Precomputed,
}

pub trait Embedder: Send + Sync {
    fn kind(&self) -> ProviderKind;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

pub(crate) fn check_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::EmptyText)
    } else {
        Ok(())
    }
}

/// Embedder backed by a fixed text-to-vector table, for corpora that ship
/// their own embeddings. Unknown texts are an error.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbedder {
    dimension: usize,
    table: std::collections::HashMap<String, Embedding>,
}

impl PrecomputedEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            table: Default::default(),
        }
    }

    /// Normalize and store `values` for `text`.
    pub fn insert(&mut self, text: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: values.len(),
            });
        }
        self.table
            .insert(text.into(), Embedding::normalized(values)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Embedder for PrecomputedEmbedder {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Precomputed
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        check_text(text)?;
        self.table.get(text).cloned().ok_or_else(|| {
            Error::ProviderUnavailable(format!("no precomputed embedding for {text:?}"))
        })
    }
}
