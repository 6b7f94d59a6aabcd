//! Composite-score retrieval.
//!
//! A memory's score is `w_sim*sim + w_field*field + w_importance*imp + w_recency*rec`,
//! with every component scaled into [0, 1]:
//!
//! * `sim = (cos + 1) / 2`
//! * `field = min(|phi| / I_cap, 1)` at the memory's cell
//! * `imp = I(cell) / mask_clamp`
//! * `rec = exp(-(now - last_access) / tau)`
//!
//! Weights `(1, 0, 0, 0)` reduce the ranking to plain cosine search.

mod metrics;

use std::cmp::Ordering;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::store::{MemoryRecord, MemoryStore};

pub use metrics::{evaluate, normalize_tokens, RetrievalMetrics};

/// Candidate pool size relative to `k` before rescoring.
pub const CANDIDATE_FACTOR: usize = 4;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalWeights {
    pub w_sim: f64,
    pub w_field: f64,
    pub w_importance: f64,
    pub w_recency: f64,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        Self {
            w_sim: 0.60,
            w_field: 0.15,
            w_importance: 0.15,
            w_recency: 0.10,
        }
    }
}

impl RetrievalWeights {
    pub fn new(w_sim: f64, w_field: f64, w_importance: f64, w_recency: f64) -> Result<Self> {
        let w = Self {
            w_sim,
            w_field,
            w_importance,
            w_recency,
        };
        w.validate()?;
        Ok(w)
    }

    /// Pure cosine ranking.
    pub fn baseline() -> Self {
        Self {
            w_sim: 1.0,
            w_field: 0.0,
            w_importance: 0.0,
            w_recency: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w_sim, self.w_field, self.w_importance, self.w_recency]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidWeights(format!(
                "weights must be non-negative, got {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "weights must sum to 1, got {w:?} (sum {sum})"
            )));
        }
        Ok(())
    }
}

impl FromStr for RetrievalWeights {
    type Err = Error;

    /// Four comma-separated numbers: `sim,field,importance,recency`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidWeights(format!("{s:?}: {e}")))?;
        match parts[..] {
            [a, b, c, d] => Self::new(a, b, c, d),
            _ => Err(Error::InvalidWeights(format!(
                "expected 4 comma-separated weights, got {s:?}"
            ))),
        }
    }
}

/// Scaled components, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Components {
    pub sim: f64,
    pub field: f64,
    pub importance: f64,
    pub recency: f64,
}

impl Components {
    pub fn weighted(&self, w: &RetrievalWeights) -> f64 {
        w.w_sim * self.sim
            + w.w_field * self.field
            + w.w_importance * self.importance
            + w.w_recency * self.recency
    }
}

/// Unscaled inputs behind [`Components`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RawComponents {
    pub cosine: f64,
    pub amplitude: f64,
    pub importance: f64,
    pub age: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredResult {
    pub memory_id: u64,
    pub score: f64,
    pub components: Components,
    pub raw: RawComponents,
}

fn by_cosine(a: (f64, u64), b: (f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn by_score(a: &ScoredResult, b: &ScoredResult) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.raw.cosine.total_cmp(&a.raw.cosine))
        .then(a.memory_id.cmp(&b.memory_id))
}

/// Top `k` records by cosine similarity, ties to the lower id.
pub fn candidate_search<'a>(
    store: &'a MemoryStore,
    query: &Embedding,
    k: usize,
) -> Result<Vec<&'a MemoryRecord>> {
    if k == 0 {
        return Err(Error::InvalidParams("k must be at least 1".into()));
    }
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    check_dimension(store, query)?;
    let mut sims: Vec<(f64, u64)> = store
        .records()
        .iter()
        .map(|r| (query.cosine(&r.embedding), r.id))
        .collect();
    sims.sort_by(|a, b| by_cosine(*a, *b));
    sims.truncate(k);
    sims.into_iter().map(|(_, id)| store.record(id)).collect()
}

fn check_dimension(store: &MemoryStore, query: &Embedding) -> Result<()> {
    let expected = store.embedder().dimension();
    if query.dimension() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: query.dimension(),
        });
    }
    Ok(())
}

pub fn score(
    record: &MemoryRecord,
    query: &Embedding,
    store: &MemoryStore,
    weights: &RetrievalWeights,
    now: f64,
) -> Result<ScoredResult> {
    if now < record.last_access {
        return Err(Error::ClockSkew {
            requested: now,
            current: record.last_access,
        });
    }
    let params = store.params();
    let cosine = query.cosine(&record.embedding);
    let amplitude = store.field_amplitude_at(record);
    let importance = store.importance_at(record);
    let age = now - record.last_access;
    let components = Components {
        sim: (cosine + 1.0) / 2.0,
        field: (amplitude / params.importance_cap).min(1.0),
        importance: (importance / params.mask_clamp()).min(1.0),
        recency: (-age / store.config().recency_tau).exp(),
    };
    Ok(ScoredResult {
        memory_id: record.id,
        score: components.weighted(weights),
        components,
        raw: RawComponents {
            cosine,
            amplitude,
            importance,
            age,
        },
    })
}

/// Score the top `4k` cosine candidates and return the best `k`.
/// Read-only; see [`retrieve`] for the variant that records access.
pub fn rank(
    store: &MemoryStore,
    query: &Embedding,
    k: usize,
    weights: &RetrievalWeights,
    now: f64,
) -> Result<Vec<ScoredResult>> {
    weights.validate()?;
    let pool = candidate_search(store, query, k.saturating_mul(CANDIDATE_FACTOR))?;
    let mut scored = pool
        .into_iter()
        .map(|r| score(r, query, store, weights, now))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(by_score);
    scored.truncate(k);
    Ok(scored)
}

/// Full retrieval cycle at time `now`: evolve up to `now`, rank, then
/// record an access for every returned memory.
pub fn retrieve(
    store: &mut MemoryStore,
    query_text: &str,
    k: usize,
    weights: &RetrievalWeights,
    now: f64,
) -> Result<Vec<ScoredResult>> {
    if query_text.trim().is_empty() {
        return Err(Error::EmptyQuery);
    }
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let query = store.embed(query_text)?;
    store.tick(now)?;
    let results = rank(store, &query, k, weights, now)?;
    for r in &results {
        store.record_access(r.memory_id, now)?;
    }
    Ok(results)
}
