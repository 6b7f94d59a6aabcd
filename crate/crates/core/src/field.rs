//! Dense reference engine for the importance-weighted reaction-diffusion field.
//!
//! The field evolves under
//!
//! ```text
//! dphi/dt = D/(1 + alpha*I) * lap(phi) - lambda/(1 + alpha*I) * phi + S
//! ```
//!
//! discretized with the 5-point Laplacian and forward Euler. Grid edges use a
//! zero-flux closure: a missing neighbour contributes no flux, so pure
//! diffusion conserves total mass exactly.
//!
//! Everything else in the crate (sparse fields, stores, ensembles) must agree
//! with this module to rounding, and the sparse path shares its per-cell
//! update so the two are bit-identical in practice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude at which a cell is considered to have blown up.
pub const BLOWUP_BOUND: f64 = 1e12;

/// Fraction of the stability limit used by [`FieldParams::with_auto_dt`].
pub const AUTO_DT_SAFETY: f64 = 0.4;

/// Grid cell coordinate. Ordered row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Axis neighbours inside an `n x n` grid, in a fixed order (up, down, left, right).
    pub fn neighbors(self, n: usize) -> impl Iterator<Item = Cell> {
        let Cell { row, col } = self;
        let up = (row > 0).then(|| Cell::new(row - 1, col));
        let down = (row + 1 < n).then(|| Cell::new(row + 1, col));
        let left = (col > 0).then(|| Cell::new(row, col - 1));
        let right = (col + 1 < n).then(|| Cell::new(row, col + 1));
        [up, down, left, right].into_iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldParams {
    /// Cells per side.
    pub grid_size: usize,
    pub diffusion: f64,
    pub decay: f64,
    pub dt: f64,
    /// Semantic distance covered by one cell.
    pub spacing: f64,
    /// Importance gain in `1 + alpha * I`.
    pub alpha: f64,
    /// Baseline importance decay rate.
    pub beta: f64,
    /// Importance added per access event.
    pub gamma: f64,
    /// Base injection spread, in the same units as `spacing`.
    pub sigma0: f64,
    /// Amplitude below which sparse cells are dropped.
    pub prune_eps: f64,
    /// Largest importance a single memory may carry.
    pub importance_cap: f64,
    /// Baseline importance of untouched cells.
    pub importance_floor: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self {
            grid_size: 128,
            diffusion: 0.02,
            decay: 0.02,
            dt: 0.1,
            spacing: 1.0,
            alpha: 2.0,
            beta: 0.001,
            gamma: 0.5,
            sigma0: 2.0,
            prune_eps: 1e-6,
            importance_cap: 1.0,
            importance_floor: 0.0,
        }
    }
}

impl FieldParams {
    /// Stability limit `h^2 / (4D + lambda*h^2)` of the explicit scheme.
    pub fn max_stable_dt(&self) -> Result<f64> {
        max_stable_dt(self)
    }

    /// Upper bound on mask values; keeps `1 + alpha*I` bounded.
    pub fn mask_clamp(&self) -> f64 {
        10.0 * self.importance_cap
    }

    /// Replace `dt` with a fixed fraction of the stability limit.
    pub fn with_auto_dt(mut self) -> Result<Self> {
        self.dt = AUTO_DT_SAFETY * self.max_stable_dt()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.grid_size < 8 {
            return bad(format!(
                "grid_size must be at least 8, got {}",
                self.grid_size
            ));
        }
        if self.grid_size > u32::MAX as usize {
            return bad(format!("grid_size {} too large", self.grid_size));
        }
        let non_negative = [
            ("diffusion", self.diffusion),
            ("decay", self.decay),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("importance_floor", self.importance_floor),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return bad(format!(
                    "{name} must be finite and non-negative, got {value}"
                ));
            }
        }
        let positive = [
            ("dt", self.dt),
            ("spacing", self.spacing),
            ("sigma0", self.sigma0),
            ("prune_eps", self.prune_eps),
            ("importance_cap", self.importance_cap),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return bad(format!("{name} must be finite and positive, got {value}"));
            }
        }
        if self.importance_floor > self.importance_cap {
            return bad(format!(
                "importance_floor {} exceeds importance_cap {}",
                self.importance_floor, self.importance_cap
            ));
        }
        match self.max_stable_dt() {
            Ok(limit) if self.dt >= limit => bad(format!(
                "dt = {} violates the stability limit dt < h^2/(4D + lambda*h^2) = {limit}; \
                 lower dt or use a dt of about {:.3e}",
                self.dt,
                AUTO_DT_SAFETY * limit
            )),
            _ => Ok(()),
        }
    }
}

/// `h^2 / (4D + lambda*h^2)`. Errors when both rates vanish, since nothing
/// constrains the step in that case.
pub fn max_stable_dt(params: &FieldParams) -> Result<f64> {
    let h2 = params.spacing * params.spacing;
    let denom = 4.0 * params.diffusion + params.decay * h2;
    if denom <= 0.0 {
        return Err(Error::DegenerateParams);
    }
    Ok(h2 / denom)
}

/// Anything that can report the importance at a cell.
pub trait ImportanceLookup {
    fn importance_at(&self, cell: Cell) -> f64;
}

/// Mask that is zero everywhere; turns importance weighting off.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoImportance;

impl ImportanceLookup for NoImportance {
    fn importance_at(&self, _cell: Cell) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseField {
    n: usize,
    values: Vec<f64>,
    pub time: f64,
}

impl DenseField {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
            time: 0.0,
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                values.push(f(row, col));
            }
        }
        Self {
            n,
            values,
            time: 0.0,
        }
    }

    /// Row-major values; panics unless `values.len() == n * n`.
    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n, "field must be {n}x{n}");
        Self {
            n,
            values,
            time: 0.0,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.values[cell.row * self.n + cell.col]
    }

    pub fn set(&mut self, cell: Cell, value: f64) {
        self.values[cell.row * self.n + cell.col] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMask {
    n: usize,
    values: Vec<f64>,
    floor: f64,
}

impl ImportanceMask {
    pub fn uniform(n: usize, floor: f64) -> Self {
        Self {
            n,
            values: vec![floor; n * n],
            floor,
        }
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.values[cell.row * self.n + cell.col]
    }

    /// Values below the floor are raised to it.
    pub fn set(&mut self, cell: Cell, value: f64) {
        self.values[cell.row * self.n + cell.col] = value.max(self.floor);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl ImportanceLookup for ImportanceMask {
    fn importance_at(&self, cell: Cell) -> f64 {
        self.get(cell)
    }
}

/// 5-point Laplacian at one cell with zero-flux edges: sum of `(neighbour - centre)`
/// over in-grid neighbours, divided by `h^2`.
#[inline]
pub(crate) fn laplacian_at(
    cell: Cell,
    n: usize,
    spacing: f64,
    mut get: impl FnMut(Cell) -> f64,
) -> f64 {
    let centre = get(cell);
    let mut acc = 0.0;
    for nb in cell.neighbors(n) {
        acc += get(nb) - centre;
    }
    acc / (spacing * spacing)
}

/// One forward-Euler update of a single cell. `extra` carries any additional
/// rate (source, coupling); it is added inside the bracket.
#[inline]
pub(crate) fn euler_update(
    phi: f64,
    lap: f64,
    importance: f64,
    params: &FieldParams,
    extra: f64,
) -> f64 {
    let weight = 1.0 + params.alpha * importance;
    phi + params.dt * (params.diffusion * lap / weight - params.decay * phi / weight + extra)
}

#[inline]
pub(crate) fn check_finite(cell: Cell, value: f64) -> Result<f64> {
    if value.is_finite() && value.abs() <= BLOWUP_BOUND {
        Ok(value)
    } else {
        Err(Error::NumericalBlowup {
            row: cell.row,
            col: cell.col,
            value,
        })
    }
}

/// Discrete Laplacian of the whole field, row-major.
pub fn laplacian(field: &DenseField, spacing: f64) -> Vec<f64> {
    let n = field.n;
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            out.push(laplacian_at(Cell::new(row, col), n, spacing, |c| {
                field.get(c)
            }));
        }
    }
    out
}

/// Advance the field by one step of `params.dt`. `source` is an optional
/// row-major rate added to every cell.
pub fn evolve_step(
    field: &DenseField,
    mask: &impl ImportanceLookup,
    params: &FieldParams,
    source: Option<&[f64]>,
) -> Result<DenseField> {
    let n = field.n;
    if let Some(src) = source {
        if src.len() != n * n {
            return Err(Error::InvalidParams(format!(
                "source has {} entries, field has {}",
                src.len(),
                n * n
            )));
        }
    }
    let mut next = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let cell = Cell::new(row, col);
            let phi = field.get(cell);
            let lap = laplacian_at(cell, n, params.spacing, |c| field.get(c));
            let extra = source.map_or(0.0, |s| s[row * n + col]);
            let value = euler_update(phi, lap, mask.importance_at(cell), params, extra);
            next.push(check_finite(cell, value)?);
        }
    }
    Ok(DenseField {
        n,
        values: next,
        time: field.time + params.dt,
    })
}

/// One step of the importance ODE: decay toward the floor, then add
/// `gamma * weight` at each accessed cell, clamped to [`FieldParams::mask_clamp`].
pub fn evolve_mask(
    mask: &ImportanceMask,
    params: &FieldParams,
    access_events: &[(Cell, f64)],
) -> ImportanceMask {
    let retain = 1.0 - params.beta * params.dt;
    let floor = mask.floor;
    let mut next = mask.clone();
    for v in &mut next.values {
        *v = floor.max(*v * retain);
    }
    let clamp = params.mask_clamp();
    for &(cell, weight) in access_events {
        let boosted = next.get(cell) + params.gamma * weight;
        next.set(cell, boosted.min(clamp));
    }
    next
}
