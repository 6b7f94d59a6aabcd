//! Memory records plus the agent's field and importance mask.
//!
//! The store is a single-writer state machine driven by caller-supplied
//! timestamps. Every timestamped write first catches evolution up to its
//! timestamp: one field step runs per elapsed `evolution_interval`, each step
//! advancing the PDE by `params.dt`.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, Embedding, FieldPosition, Projector};
use crate::error::{Error, Result};
use crate::field::{Cell, FieldParams};
use crate::retrieval::RetrievalWeights;
use crate::sparse::{evolve_coupled, SparseField, SparseMask};

pub const DEFAULT_RECENCY_TAU: f64 = 86_400.0;
pub const DEFAULT_PROJECTION_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub params: FieldParams,
    pub projection_seed: u64,
    pub weights: RetrievalWeights,
    /// Time constant of the recency component.
    pub recency_tau: f64,
    /// Clock time per evolution step.
    pub evolution_interval: f64,
    /// Prune after every `prune_every` steps; 0 disables pruning.
    pub prune_every: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        let params = FieldParams::default();
        Self {
            evolution_interval: params.dt,
            params,
            projection_seed: DEFAULT_PROJECTION_SEED,
            weights: RetrievalWeights::default(),
            recency_tau: DEFAULT_RECENCY_TAU,
            prune_every: 1,
        }
    }
}

impl StoreConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.weights.validate()?;
        if !(self.recency_tau.is_finite() && self.recency_tau > 0.0) {
            return Err(Error::InvalidParams(format!(
                "recency_tau must be positive, got {}",
                self.recency_tau
            )));
        }
        if !(self.evolution_interval.is_finite() && self.evolution_interval > 0.0) {
            return Err(Error::InvalidParams(format!(
                "evolution_interval must be positive, got {}",
                self.evolution_interval
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub id: u64,
    pub text: String,
    pub embedding: Embedding,
    pub position: FieldPosition,
    pub importance: f64,
    pub created_at: f64,
    pub last_access: f64,
    pub access_count: u64,
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickReport {
    pub steps: u64,
    pub pruned: usize,
}

impl std::ops::AddAssign for TickReport {
    fn add_assign(&mut self, rhs: Self) {
        self.steps += rhs.steps;
        self.pruned += rhs.pruned;
    }
}

/// Current wall-clock time in seconds since the Unix epoch.
pub fn wall_clock() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Clone)]
pub struct MemoryStore {
    config: StoreConfig,
    records: Vec<MemoryRecord>,
    field: SparseField,
    mask: SparseMask,
    clock: f64,
    origin: f64,
    evolved_steps: u64,
    embedder: Arc<dyn Embedder>,
    projector: Projector,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("records", &self.records.len())
            .field("active_cells", &self.field.active_count())
            .field("clock", &self.clock)
            .field("evolved_steps", &self.evolved_steps)
            .finish()
    }
}

/// Raw state restored from a snapshot.
pub(crate) struct StoreParts {
    pub config: StoreConfig,
    pub records: Vec<MemoryRecord>,
    pub field: SparseField,
    pub mask: SparseMask,
    pub clock: f64,
    pub origin: f64,
    pub evolved_steps: u64,
}

impl MemoryStore {
    /// Empty store whose clock (and evolution origin) starts at 0.
    pub fn new(config: StoreConfig, embedder: Arc<dyn Embedder>) -> Result<Self> {
        Self::starting_at(config, embedder, 0.0)
    }

    /// Empty store whose clock starts at `start`. Use the first event's
    /// timestamp so evolution does not replay time before the store existed.
    pub fn starting_at(
        config: StoreConfig,
        embedder: Arc<dyn Embedder>,
        start: f64,
    ) -> Result<Self> {
        config.validate()?;
        if !start.is_finite() {
            return Err(Error::InvalidParams(format!(
                "start time {start} is not finite"
            )));
        }
        let n = config.params.grid_size;
        let floor = config.params.importance_floor;
        let projector = Projector::new(config.projection_seed, embedder.dimension());
        Ok(Self {
            records: Vec::new(),
            field: SparseField::new(n),
            mask: SparseMask::new(floor),
            clock: start,
            origin: start,
            evolved_steps: 0,
            embedder,
            projector,
            config,
        })
    }

    pub(crate) fn from_parts(parts: StoreParts, embedder: Arc<dyn Embedder>) -> Result<Self> {
        parts.config.validate()?;
        let projector = Projector::new(parts.config.projection_seed, embedder.dimension());
        Ok(Self {
            config: parts.config,
            records: parts.records,
            field: parts.field,
            mask: parts.mask,
            clock: parts.clock,
            origin: parts.origin,
            evolved_steps: parts.evolved_steps,
            embedder,
            projector,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn params(&self) -> &FieldParams {
        &self.config.params
    }

    /// Replace the retrieval weights used by default.
    pub fn set_weights(&mut self, weights: RetrievalWeights) -> Result<()> {
        weights.validate()?;
        self.config.weights = weights;
        Ok(())
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn record(&self, id: u64) -> Result<&MemoryRecord> {
        self.records
            .get(id as usize)
            .ok_or(Error::UnknownMemory(id))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn field(&self) -> &SparseField {
        &self.field
    }

    pub fn mask(&self) -> &SparseMask {
        &self.mask
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn evolved_steps(&self) -> u64 {
        self.evolved_steps
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn embed(&self, text: &str) -> Result<Embedding> {
        self.embedder.embed(text)
    }

    pub fn position_of(&self, embedding: &Embedding) -> Result<FieldPosition> {
        self.projector
            .project(embedding, self.config.params.grid_size)
    }

    /// Spread used for a memory of the given importance: `sigma0 * (1 + 0.5 I / I_cap)`.
    pub fn injection_sigma(&self, importance: f64) -> f64 {
        let p = &self.config.params;
        p.sigma0 * (1.0 + 0.5 * importance / p.importance_cap)
    }

    pub fn inject(&mut self, text: &str, importance: f64, when: f64) -> Result<MemoryRecord> {
        self.inject_in_session(text, importance, when, None)
    }

    /// Embed, project, and add `I exp(-r^2 / 2 sigma^2)` around the memory's
    /// cell wherever that value is at least `prune_eps`.
    pub fn inject_in_session(
        &mut self,
        text: &str,
        importance: f64,
        when: f64,
        session_id: Option<String>,
    ) -> Result<MemoryRecord> {
        let cap = self.config.params.importance_cap;
        if !(importance > 0.0 && importance <= cap) {
            return Err(Error::ImportanceOutOfRange {
                value: importance,
                cap,
            });
        }
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        self.check_time(when)?;
        let embedding = self.embedder.embed(text)?;
        let position = self.position_of(&embedding)?;
        self.tick(when)?;

        self.deposit(position.cell, importance)?;

        let record = MemoryRecord {
            id: self.records.len() as u64,
            text: text.to_string(),
            embedding,
            position,
            importance,
            created_at: when,
            last_access: when,
            access_count: 0,
            session_id,
        };
        self.records.push(record.clone());
        Ok(record)
    }

    fn deposit(&mut self, centre: Cell, importance: f64) -> Result<()> {
        let p = self.config.params;
        let sigma = self.injection_sigma(importance);
        if importance < p.prune_eps {
            return Ok(());
        }
        let radius = (2.0 * sigma * sigma * (importance / p.prune_eps).ln()).sqrt();
        let reach = (radius / p.spacing).ceil() as usize;
        let n = p.grid_size;
        let rows = centre.row.saturating_sub(reach)..=(centre.row + reach).min(n - 1);
        for row in rows {
            for col in centre.col.saturating_sub(reach)..=(centre.col + reach).min(n - 1) {
                let dr = row.abs_diff(centre.row) as f64 * p.spacing;
                let dc = col.abs_diff(centre.col) as f64 * p.spacing;
                let g = importance * (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp();
                if g >= p.prune_eps {
                    let cell = Cell::new(row, col);
                    self.field.add(cell, g)?;
                    self.mask.raise_to(cell, importance);
                }
            }
        }
        Ok(())
    }

    fn check_time(&self, when: f64) -> Result<()> {
        if !when.is_finite() || when < self.clock {
            return Err(Error::ClockSkew {
                requested: when,
                current: self.clock,
            });
        }
        Ok(())
    }

    /// Run every evolution step whose interval boundary falls at or before
    /// `until`, then move the clock to `until`.
    pub fn tick(&mut self, until: f64) -> Result<TickReport> {
        self.check_time(until)?;
        let elapsed = (until - self.origin) / self.config.evolution_interval;
        // Absorb rounding when `until` sits exactly on a boundary.
        let due = (elapsed + 1e-9).floor().max(0.0) as u64;
        let mut report = TickReport::default();
        while self.evolved_steps < due {
            let next = evolve_coupled(&self.field, &self.mask, &self.config.params, &[])?;
            report.pruned += self.finish_step(next);
            report.steps += 1;
        }
        self.clock = until;
        Ok(report)
    }

    /// Install a freshly evolved field: evolve the mask, count the step,
    /// and prune per cadence. Returns cells pruned.
    pub(crate) fn finish_step(&mut self, next: SparseField) -> usize {
        self.field = next;
        self.mask.evolve(&self.config.params, &[]);
        self.evolved_steps += 1;
        let every = self.config.prune_every;
        if every > 0 && self.evolved_steps % every == 0 {
            let pruned = self.field.prune(self.config.params.prune_eps);
            self.mask.co_prune(&self.field);
            pruned
        } else {
            0
        }
    }

    /// Advance the clock by one interval without evolving; used by coupled
    /// ensembles, which evolve all fields themselves.
    pub(crate) fn advance_clock_one_interval(&mut self) {
        let t = self.origin + self.evolved_steps as f64 * self.config.evolution_interval;
        self.clock = self.clock.max(t);
    }

    /// Register an access: bump the count and timestamp, and add `gamma` to
    /// the mask at the memory's cell.
    pub fn record_access(&mut self, id: u64, when: f64) -> Result<MemoryRecord> {
        let cell = self.record(id)?.position.cell;
        self.check_time(when)?;
        self.tick(when)?;
        let p = self.config.params;
        let boosted = (self.mask.get(cell) + p.gamma).min(p.mask_clamp());
        self.mask.set(cell, boosted);
        let record = &mut self.records[id as usize];
        record.last_access = when;
        record.access_count += 1;
        Ok(record.clone())
    }

    /// `|phi|` at the record's cell; zero once the cell is pruned.
    pub fn field_amplitude_at(&self, record: &MemoryRecord) -> f64 {
        self.field.get(record.position.cell).abs()
    }

    pub fn importance_at(&self, record: &MemoryRecord) -> f64 {
        self.mask.get(record.position.cell)
    }

    /// Replace the field wholesale; intended for tests and tooling.
    pub fn replace_field(&mut self, field: SparseField) -> Result<()> {
        if field.grid_size() != self.config.params.grid_size {
            return Err(Error::InvalidParams("field grid size mismatch".into()));
        }
        self.field = field;
        Ok(())
    }

    pub(crate) fn parts(&self) -> (&[MemoryRecord], &SparseField, &SparseMask, u64) {
        (&self.records, &self.field, &self.mask, self.evolved_steps)
    }
}
