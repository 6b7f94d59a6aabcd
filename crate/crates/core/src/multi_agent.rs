//! Ensembles of agents whose fields are linearly coupled:
//!
//! ```text
//! dphi_i/dt = (own importance-weighted diffusion and decay) + sum_j k_ij (phi_j - phi_i)
//! ```
//!
//! Steps are synchronous: every coupling term reads the pre-step fields.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, LocalEmbedder};
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::sparse::{evolve_coupled, SparseField};
use crate::store::{MemoryStore, StoreConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Full,
    Ring,
    Custom,
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Topology::Full),
            "ring" => Ok(Topology::Ring),
            other => Err(Error::InvalidParams(format!(
                "unknown topology {other:?}; expected full or ring"
            ))),
        }
    }
}

/// Symmetric, non-negative coupling strengths with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    k: Vec<Vec<f64>>,
    topology: Topology,
}

impl CouplingMatrix {
    pub fn full(agents: usize, strength: f64) -> Result<Self> {
        let k = (0..agents)
            .map(|i| {
                (0..agents)
                    .map(|j| if i == j { 0.0 } else { strength })
                    .collect()
            })
            .collect();
        Self::checked(k, Topology::Full)
    }

    /// Each agent coupled to its two ring neighbours.
    pub fn ring(agents: usize, strength: f64) -> Result<Self> {
        let mut k = vec![vec![0.0; agents]; agents];
        if agents > 1 {
            for i in 0..agents {
                let j = (i + 1) % agents;
                k[i][j] = strength;
                k[j][i] = strength;
            }
        }
        Self::checked(k, Topology::Ring)
    }

    pub fn custom(k: Vec<Vec<f64>>) -> Result<Self> {
        Self::checked(k, Topology::Custom)
    }

    pub fn with_topology(topology: Topology, agents: usize, strength: f64) -> Result<Self> {
        match topology {
            Topology::Full => Self::full(agents, strength),
            Topology::Ring => Self::ring(agents, strength),
            Topology::Custom => Err(Error::InvalidParams(
                "custom topology needs an explicit matrix".into(),
            )),
        }
    }

    fn checked(k: Vec<Vec<f64>>, topology: Topology) -> Result<Self> {
        let n = k.len();
        for (i, row) in k.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParams(format!(
                    "coupling row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row[i] != 0.0 {
                return Err(Error::InvalidParams(format!(
                    "coupling diagonal k[{i}][{i}] must be zero"
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidParams(format!(
                        "coupling k[{i}][{j}] = {v} must be non-negative"
                    )));
                }
                if v != k[j][i] {
                    return Err(Error::InvalidParams(format!(
                        "coupling must be symmetric; k[{i}][{j}] != k[{j}][{i}]"
                    )));
                }
            }
        }
        Ok(Self { k, topology })
    }

    pub fn agents(&self) -> usize {
        self.k.len()
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.k[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.k
    }

    pub fn max_row_sum(&self) -> f64 {
        self.k
            .iter()
            .map(|r| r.iter().sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// `dt * (4D/h^2 + lambda + max_i sum_j k_ij) < 2`: the single-field bound
/// extended with the coupling rate.
pub fn check_coupled_stability(params: &FieldParams, coupling: &CouplingMatrix) -> Result<()> {
    let rate = 4.0 * params.diffusion / (params.spacing * params.spacing)
        + params.decay
        + coupling.max_row_sum();
    let product = params.dt * rate;
    if product < 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "coupled step unstable: dt * (4D/h^2 + lambda + max row sum k) = {product:.4} must be < 2"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct AgentEnsemble {
    agents: Vec<MemoryStore>,
    coupling: CouplingMatrix,
}

impl AgentEnsemble {
    pub fn new(agents: Vec<MemoryStore>, coupling: CouplingMatrix) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidParams(
                "ensemble needs at least one agent".into(),
            ));
        }
        if coupling.agents() != agents.len() {
            return Err(Error::InvalidParams(format!(
                "coupling is {}x{} but there are {} agents",
                coupling.agents(),
                coupling.agents(),
                agents.len()
            )));
        }
        let first = agents[0].config();
        for (i, a) in agents.iter().enumerate().skip(1) {
            let c = a.config();
            let same = c.params.grid_size == first.params.grid_size
                && c.params.spacing == first.params.spacing
                && c.params.dt == first.params.dt
                && c.projection_seed == first.projection_seed
                && c.evolution_interval == first.evolution_interval
                && a.embedder().dimension() == agents[0].embedder().dimension();
            if !same {
                return Err(Error::InvalidParams(format!(
                    "agent {i} is not commensurable with agent 0 (grid, spacing, dt, interval, seed and dimension must match)"
                )));
            }
        }
        for a in &agents {
            check_coupled_stability(a.params(), &coupling)?;
        }
        Ok(Self { agents, coupling })
    }

    pub fn agents(&self) -> &[MemoryStore] {
        &self.agents
    }

    pub fn agent_mut(&mut self, i: usize) -> &mut MemoryStore {
        &mut self.agents[i]
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Advance every agent one step. Returns cells pruned across the ensemble.
    pub fn coupled_step(&mut self) -> Result<usize> {
        let fields: Vec<&SparseField> = self.agents.iter().map(|a| a.field()).collect();
        let next: Vec<SparseField> = (0..self.agents.len())
            .into_par_iter()
            .map(|i| {
                let couplings: Vec<(f64, &SparseField)> = (0..fields.len())
                    .filter(|&j| j != i && self.coupling.get(i, j) != 0.0)
                    .map(|j| (self.coupling.get(i, j), fields[j]))
                    .collect();
                let agent = &self.agents[i];
                evolve_coupled(agent.field(), agent.mask(), agent.params(), &couplings)
            })
            .collect::<Result<_>>()?;
        let mut pruned = 0;
        for (agent, field) in self.agents.iter_mut().zip(next) {
            pruned += agent.finish_step(field);
            agent.advance_clock_one_interval();
        }
        Ok(pruned)
    }

    /// Mean pairwise cosine between flattened fields. Two empty fields count
    /// as agreeing (1); an empty and a non-empty field as disagreeing (0).
    /// `None` for fewer than two agents.
    pub fn collective_intelligence(&self) -> Option<f64> {
        let k = self.agents.len();
        if k < 2 {
            return None;
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..k {
            for j in i + 1..k {
                total += field_cosine(self.agents[i].field(), self.agents[j].field());
                pairs += 1;
            }
        }
        Some(total / pairs as f64)
    }

    /// Largest L2 distance between any two agents' fields.
    pub fn max_pairwise_diff(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.agents.len() {
            for j in i + 1..self.agents.len() {
                worst = worst.max(field_distance(
                    self.agents[i].field(),
                    self.agents[j].field(),
                ));
            }
        }
        worst
    }

    pub fn active_cells_total(&self) -> usize {
        self.agents.iter().map(|a| a.field().active_count()).sum()
    }

    /// Detection threshold for sharing efficiency: ten times the pruning floor.
    pub fn detection_threshold(&self) -> f64 {
        10.0 * self.agents[0].params().prune_eps
    }

    /// Fraction of (item, non-origin agent) pairs whose amplitude at the
    /// item's cell exceeds [`Self::detection_threshold`]. `None` when there
    /// are no such pairs.
    pub fn sharing_efficiency(&self, items: &[(&str, usize)]) -> Result<Option<f64>> {
        let theta = self.detection_threshold();
        let mut detected = 0usize;
        let mut pairs = 0usize;
        for &(text, origin) in items {
            let source = self.agents.get(origin).ok_or_else(|| {
                Error::InvalidParams(format!("item origin {origin} is not an agent"))
            })?;
            let cell = source.position_of(&source.embed(text)?)?.cell;
            for (i, agent) in self.agents.iter().enumerate() {
                if i == origin {
                    continue;
                }
                pairs += 1;
                if agent.field().get(cell).abs() > theta {
                    detected += 1;
                }
            }
        }
        Ok((pairs > 0).then(|| detected as f64 / pairs as f64))
    }
}

fn field_cosine(a: &SparseField, b: &SparseField) -> f64 {
    let dot: f64 = a.iter().map(|(c, v)| v * b.get(c)).sum();
    let na = a.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => dot / (na * nb),
    }
}

fn field_distance(a: &SparseField, b: &SparseField) -> f64 {
    let mut sq: f64 = a.iter().map(|(c, v)| (v - b.get(c)).powi(2)).sum();
    sq += b
        .iter()
        .filter(|(c, _)| !a.contains(*c))
        .map(|(_, v)| v * v)
        .sum::<f64>();
    sq.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub agents: usize,
    pub topology: Topology,
    pub coupling: f64,
    pub items_per_agent: usize,
    pub max_steps: usize,
    pub ci_target: f64,
    pub item_importance: f64,
    pub seed: u64,
    pub params: FieldParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            agents: 2,
            topology: Topology::Full,
            coupling: 0.5,
            items_per_agent: 3,
            max_steps: 500,
            ci_target: 0.999,
            item_importance: 0.8,
            seed: 0,
            params: FieldParams {
                grid_size: 64,
                ..FieldParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioStatus {
    Converged,
    NoConvergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub ci: f64,
    pub max_pairwise_diff: f64,
    pub active_cells_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub agents: usize,
    pub status: ScenarioStatus,
    pub final_ci: f64,
    pub sharing_efficiency: Option<f64>,
    pub steps_to_convergence: Option<usize>,
    pub wall_time_secs: f64,
    pub trace: Vec<TraceRow>,
}

impl ScenarioReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,ci,max_pairwise_diff,active_cells_total\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.step, r.ci, r.max_pairwise_diff, r.active_cells_total
            ));
        }
        out
    }
}

const VOCABULARY: &[&str] = &[
    "alpine", "basalt", "cobalt", "delta", "ember", "fjord", "glacier", "harbor", "indigo",
    "juniper", "kestrel", "lagoon", "meadow", "nebula", "orchid", "prairie", "quartz", "raven",
    "sierra", "tundra", "umber", "violet", "willow", "xenon", "yarrow", "zephyr", "anchor",
    "beacon", "canyon", "dune", "estuary", "falcon", "granite", "heron", "island", "jasper",
    "kelp", "lichen", "marsh", "nectar", "obsidian", "pebble", "quill", "reef", "saffron",
    "thistle", "upland", "vapor", "walrus", "yonder",
];

/// Distinct synthetic knowledge items, `per_agent` for each of `agents`.
pub fn synthetic_items(agents: usize, per_agent: usize, seed: u64) -> Vec<(String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(agents * per_agent);
    for agent in 0..agents {
        for item in 0..per_agent {
            let words: Vec<&str> = (0..4)
                .map(|_| *VOCABULARY.choose(&mut rng).expect("vocabulary"))
                .collect();
            items.push((
                format!("agent {agent} fact {item}: {}", words.join(" ")),
                agent,
            ));
        }
    }
    items
}

fn trace_row(step: usize, ensemble: &AgentEnsemble) -> TraceRow {
    TraceRow {
        step,
        ci: ensemble.collective_intelligence().unwrap_or(1.0),
        max_pairwise_diff: ensemble.max_pairwise_diff(),
        active_cells_total: ensemble.active_cells_total(),
    }
}

/// Inject synthetic items at their origin agents, then couple until the
/// collective-intelligence target is met or `max_steps` run out.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    if !(2..=16).contains(&cfg.agents) {
        return Err(Error::InvalidParams(format!(
            "agents must be in 2..=16, got {}",
            cfg.agents
        )));
    }
    let started = Instant::now();
    let embedder: Arc<dyn Embedder> = Arc::new(LocalEmbedder::default());
    let store_config = StoreConfig {
        params: cfg.params,
        evolution_interval: cfg.params.dt,
        projection_seed: cfg.seed,
        ..StoreConfig::default()
    };
    let stores = (0..cfg.agents)
        .map(|_| MemoryStore::new(store_config.clone(), embedder.clone()))
        .collect::<Result<Vec<_>>>()?;
    let coupling = CouplingMatrix::with_topology(cfg.topology, cfg.agents, cfg.coupling)?;
    let mut ensemble = AgentEnsemble::new(stores, coupling)?;

    let items = synthetic_items(cfg.agents, cfg.items_per_agent, cfg.seed);
    for (text, origin) in &items {
        ensemble
            .agent_mut(*origin)
            .inject(text, cfg.item_importance, 0.0)?;
    }

    let mut trace = vec![trace_row(0, &ensemble)];
    let mut converged_at = (trace[0].ci >= cfg.ci_target).then_some(0);
    let mut step = 0;
    while converged_at.is_none() && step < cfg.max_steps {
        ensemble.coupled_step()?;
        step += 1;
        let row = trace_row(step, &ensemble);
        if row.ci >= cfg.ci_target {
            converged_at = Some(step);
        }
        trace.push(row);
    }

    let borrowed: Vec<(&str, usize)> = items.iter().map(|(t, o)| (t.as_str(), *o)).collect();
    let sharing_efficiency = ensemble.sharing_efficiency(&borrowed)?;
    let final_ci = trace.last().map_or(0.0, |r| r.ci);
    Ok(ScenarioReport {
        agents: cfg.agents,
        status: if converged_at.is_some() {
            ScenarioStatus::Converged
        } else {
            ScenarioStatus::NoConvergence
        },
        final_ci,
        sharing_efficiency,
        steps_to_convergence: converged_at,
        wall_time_secs: started.elapsed().as_secs_f64(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::PrecomputedEmbedder;
    use crate::field::Cell;

    fn pure_coupling() -> FieldParams {
        FieldParams {
            grid_size: 16,
            diffusion: 0.0,
            decay: 0.0,
            alpha: 0.0,
            beta: 0.0,
            dt: 0.1,
            ..FieldParams::default()
        }
    }

    fn ensemble_of(params: FieldParams, agents: usize, coupling: CouplingMatrix) -> AgentEnsemble {
        let embedder: Arc<dyn Embedder> = Arc::new(LocalEmbedder::default());
        let config = StoreConfig {
            params,
            evolution_interval: params.dt,
            prune_every: 0,
            ..StoreConfig::default()
        };
        let stores = (0..agents)
            .map(|_| MemoryStore::new(config.clone(), embedder.clone()).unwrap())
            .collect();
        AgentEnsemble::new(stores, coupling).unwrap()
    }

    fn set_cell(e: &mut AgentEnsemble, agent: usize, cell: Cell, v: f64) {
        let mut f = e.agents()[agent].field().clone();
        f.set(cell, v).unwrap();
        e.agent_mut(agent).replace_field(f).unwrap();
    }

    #[test]
    fn coupling_matrix_validation() {
        assert!(CouplingMatrix::custom(vec![vec![0.0, 1.0], vec![0.5, 0.0]]).is_err());
        assert!(CouplingMatrix::custom(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(CouplingMatrix::custom(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
        let ring = CouplingMatrix::ring(4, 0.3).unwrap();
        assert_eq!(ring.get(0, 1), 0.3);
        assert_eq!(ring.get(0, 3), 0.3);
        assert_eq!(ring.get(0, 2), 0.0);
        assert_eq!(ring.max_row_sum(), 0.6);
        assert_eq!(CouplingMatrix::full(3, 0.2).unwrap().max_row_sum(), 0.4);
    }

    #[test]
    fn unstable_coupling_rejected() {
        let p = pure_coupling();
        let c = CouplingMatrix::full(4, 10.0).unwrap();
        assert!(check_coupled_stability(&p, &c).is_err());
    }

    #[test]
    fn zero_coupling_matches_independent_evolution() {
        let params = FieldParams {
            grid_size: 32,
            ..FieldParams::default()
        };
        let mut e = ensemble_of(params, 2, CouplingMatrix::full(2, 0.0).unwrap());
        e.agent_mut(0)
            .inject("first agent memory", 1.0, 0.0)
            .unwrap();
        e.agent_mut(1)
            .inject("second agent different memory", 0.6, 0.0)
            .unwrap();
        let mut solo: Vec<MemoryStore> = e.agents().to_vec();
        for _ in 0..50 {
            e.coupled_step().unwrap();
        }
        for (i, s) in solo.iter_mut().enumerate() {
            s.tick(5.0).unwrap();
            assert_eq!(s.field(), e.agents()[i].field());
            assert_eq!(s.mask(), e.agents()[i].mask());
            assert_eq!(s.clock(), e.agents()[i].clock());
        }
    }

    #[test]
    fn identical_fields_feel_no_coupling() {
        let params = FieldParams {
            grid_size: 32,
            ..FieldParams::default()
        };
        let mut e = ensemble_of(params, 3, CouplingMatrix::full(3, 0.7).unwrap());
        for i in 0..3 {
            e.agent_mut(i).inject("shared memory", 1.0, 0.0).unwrap();
        }
        let mut solo = e.agents()[0].clone();
        for _ in 0..20 {
            e.coupled_step().unwrap();
        }
        solo.tick(2.0).unwrap();
        for a in e.agents() {
            assert_eq!(a.field(), solo.field());
        }
    }

    #[test]
    fn two_agent_closed_form() {
        let p = pure_coupling();
        let k = 0.8;
        let mut e = ensemble_of(p, 2, CouplingMatrix::full(2, k).unwrap());
        let cell = Cell::new(5, 9);
        let (a0, b0) = (1.0, 0.25);
        set_cell(&mut e, 0, cell, a0);
        set_cell(&mut e, 1, cell, b0);
        // Oracle: sum is invariant, difference scales by (1 - 2 k dt) per step.
        let factor: f64 = 1.0 - 2.0 * k * p.dt;
        for n in 1..=40 {
            e.coupled_step().unwrap();
            let a = e.agents()[0].field().get(cell);
            let b = e.agents()[1].field().get(cell);
            assert!((a + b - (a0 + b0)).abs() < 1e-12);
            assert!((a - b - (a0 - b0) * factor.powi(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn ci_conventions() {
        let p = pure_coupling();
        let mut e = ensemble_of(p, 2, CouplingMatrix::full(2, 0.1).unwrap());
        assert_eq!(e.collective_intelligence(), Some(1.0));
        set_cell(&mut e, 0, Cell::new(1, 1), 1.0);
        assert_eq!(e.collective_intelligence(), Some(0.0));
        set_cell(&mut e, 1, Cell::new(8, 8), 1.0);
        assert_eq!(e.collective_intelligence(), Some(0.0));
        set_cell(&mut e, 1, Cell::new(8, 8), 0.0);
        set_cell(&mut e, 1, Cell::new(1, 1), 3.0);
        assert!((e.collective_intelligence().unwrap() - 1.0).abs() < 1e-15);

        let single = ensemble_of(p, 1, CouplingMatrix::full(1, 0.0).unwrap());
        assert_eq!(single.collective_intelligence(), None);
        assert_eq!(single.sharing_efficiency(&[]).unwrap(), None);
    }

    #[test]
    fn two_agents_converge_under_coupling() {
        let p = pure_coupling();
        let mut e = ensemble_of(p, 2, CouplingMatrix::full(2, 0.5).unwrap());
        set_cell(&mut e, 0, Cell::new(2, 2), 1.0);
        set_cell(&mut e, 1, Cell::new(12, 12), 1.0);
        let sum_norm = (2.0f64).sqrt();
        let mut steps = 0;
        while e.max_pairwise_diff() >= 0.01 * sum_norm {
            e.coupled_step().unwrap();
            steps += 1;
        }
        // Closed form: |a - b| = sqrt(2) * 0.9^n, so n = ceil(ln 0.01 / ln 0.9) = 44.
        assert_eq!(steps, (0.01f64.ln() / 0.9f64.ln()).ceil() as usize);
        assert!(e.collective_intelligence().unwrap() >= 0.99);
    }

    #[test]
    fn sharing_needs_coupling() {
        let d = 8;
        let mut table = PrecomputedEmbedder::new(d);
        let mut a = vec![0.0; d];
        a[0] = 1.0;
        let mut b = vec![0.0; d];
        b[0] = -1.0;
        table.insert("item a", a).unwrap();
        table.insert("item b", b).unwrap();
        let embedder: Arc<dyn Embedder> = Arc::new(table);
        let params = FieldParams {
            grid_size: 64,
            ..FieldParams::default()
        };
        let build = |k: f64| {
            let config = StoreConfig {
                params,
                evolution_interval: params.dt,
                ..StoreConfig::default()
            };
            let stores = (0..2)
                .map(|_| MemoryStore::new(config.clone(), embedder.clone()).unwrap())
                .collect();
            let mut e = AgentEnsemble::new(stores, CouplingMatrix::full(2, k).unwrap()).unwrap();
            let ra = e.agent_mut(0).inject("item a", 1.0, 0.0).unwrap();
            let rb = e.agent_mut(1).inject("item b", 1.0, 0.0).unwrap();
            // Antipodal embeddings project to mirrored cells, far apart.
            assert!(
                ra.position.cell.row.abs_diff(rb.position.cell.row)
                    + ra.position.cell.col.abs_diff(rb.position.cell.col)
                    > 20
            );
            e
        };
        let items = [("item a", 0), ("item b", 1)];

        let mut isolated = build(0.0);
        isolated.coupled_step().unwrap();
        assert_eq!(isolated.sharing_efficiency(&items).unwrap(), Some(0.0));

        let mut coupled = build(0.5);
        for _ in 0..100 {
            coupled.coupled_step().unwrap();
        }
        assert_eq!(coupled.sharing_efficiency(&items).unwrap(), Some(1.0));
    }

    #[test]
    fn pure_coupling_conserves_sum() {
        let p = pure_coupling();
        let mut e = ensemble_of(p, 4, CouplingMatrix::ring(4, 0.6).unwrap());
        for (i, cell) in [
            Cell::new(1, 1),
            Cell::new(4, 9),
            Cell::new(10, 3),
            Cell::new(15, 15),
        ]
        .into_iter()
        .enumerate()
        {
            set_cell(&mut e, i, cell, (i + 1) as f64);
        }
        let total = |e: &AgentEnsemble| e.agents().iter().map(|a| a.field().sum()).sum::<f64>();
        let before = total(&e);
        let mut last_diff = e.max_pairwise_diff();
        for _ in 0..1000 {
            e.coupled_step().unwrap();
            let diff = e.max_pairwise_diff();
            assert!(diff <= last_diff + 1e-15);
            last_diff = diff;
        }
        assert!(((total(&e) - before) / before).abs() < 1e-9);
    }

    #[test]
    fn relabeling_agents_permutes_results() {
        let params = FieldParams {
            grid_size: 32,
            ..FieldParams::default()
        };
        let k = vec![
            vec![0.0, 0.3, 0.0],
            vec![0.3, 0.0, 0.6],
            vec![0.0, 0.6, 0.0],
        ];
        let texts = ["alpha memory", "beta memory", "gamma memory"];
        let mut e = ensemble_of(params, 3, CouplingMatrix::custom(k.clone()).unwrap());
        for (i, t) in texts.iter().enumerate() {
            e.agent_mut(i).inject(t, 1.0, 0.0).unwrap();
        }
        // Permutation 0->2, 1->0, 2->1.
        let perm = [2usize, 0, 1];
        let mut pk = vec![vec![0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                pk[perm[i]][perm[j]] = k[i][j];
            }
        }
        let mut p = ensemble_of(params, 3, CouplingMatrix::custom(pk).unwrap());
        for (i, t) in texts.iter().enumerate() {
            p.agent_mut(perm[i]).inject(t, 1.0, 0.0).unwrap();
        }
        for _ in 0..30 {
            e.coupled_step().unwrap();
            p.coupled_step().unwrap();
        }
        for i in 0..3 {
            assert_eq!(e.agents()[i].field(), p.agents()[perm[i]].field());
        }
        assert!(
            (e.collective_intelligence().unwrap() - p.collective_intelligence().unwrap()).abs()
                < 1e-12
        );
    }

    #[test]
    fn scenario_converges_with_full_coupling() {
        let report = run_scenario(&ScenarioConfig::default()).unwrap();
        assert_eq!(report.status, ScenarioStatus::Converged);
        assert!(report.final_ci >= 0.99);
        assert_eq!(report.sharing_efficiency, Some(1.0));
        let csv = report.trace_csv();
        assert!(csv.starts_with("step,ci,max_pairwise_diff,active_cells_total\n"));
        assert_eq!(csv.lines().count(), report.trace.len() + 1);
    }

    #[test]
    fn scenario_without_coupling_does_not_converge() {
        let cfg = ScenarioConfig {
            coupling: 0.0,
            max_steps: 50,
            params: FieldParams {
                grid_size: 64,
                diffusion: 0.0,
                alpha: 0.0,
                ..FieldParams::default()
            },
            ..ScenarioConfig::default()
        };
        let report = run_scenario(&cfg).unwrap();
        assert_eq!(report.status, ScenarioStatus::NoConvergence);
        assert_eq!(report.steps_to_convergence, None);
        // Uniform decay rescales each field, leaving pairwise cosines unchanged
        // apart from pruned sub-threshold tails.
        let first = report.trace[0].ci;
        assert!(report.trace.iter().all(|r| (r.ci - first).abs() < 1e-6));
    }

    #[test]
    fn scenario_agent_count_validated() {
        for agents in [0, 1, 17] {
            let cfg = ScenarioConfig {
                agents,
                ..ScenarioConfig::default()
            };
            assert!(run_scenario(&cfg).is_err());
        }
    }
}
