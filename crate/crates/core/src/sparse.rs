//! Active-cell representation of the field.
//!
//! Only cells with non-zero amplitude are stored; an evolution step touches
//! the stored cells plus their 4-neighbour halo, which is exactly the support
//! of the 5-point stencil. Per-cell arithmetic is shared with
//! [`crate::field`], so with pruning disabled the sparse and dense engines
//! produce the same values.
//!
//! Cells live in a `BTreeMap`, so iteration order (and therefore any sum over
//! cells and every serialized snapshot) is deterministic.

use std::cmp::Ordering;
use std::collections::{btree_map, BTreeMap};
use std::iter::Peekable;

use crate::error::{Error, Result};
use crate::field::{
    check_finite, euler_update, laplacian_at, Cell, DenseField, FieldParams, ImportanceLookup,
    ImportanceMask,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseField {
    n: usize,
    cells: BTreeMap<Cell, f64>,
    pub time: f64,
}

impl SparseField {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: BTreeMap::new(),
            time: 0.0,
        }
    }

    /// Non-zero cells of a dense field.
    pub fn from_dense(dense: &DenseField) -> Self {
        let n = dense.grid_size();
        let mut cells = BTreeMap::new();
        for row in 0..n {
            for col in 0..n {
                let cell = Cell::new(row, col);
                let v = dense.get(cell);
                if v != 0.0 {
                    cells.insert(cell, v);
                }
            }
        }
        Self {
            n,
            cells,
            time: dense.time,
        }
    }

    pub fn to_dense(&self) -> DenseField {
        let mut dense = DenseField::zeros(self.n);
        for (&cell, &v) in &self.cells {
            dense.set(cell, v);
        }
        dense.time = self.time;
        dense
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.cells.get(&cell).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.cells.contains_key(&cell)
    }

    /// Store `value` at `cell`; a zero value removes the cell.
    pub fn set(&mut self, cell: Cell, value: f64) -> Result<()> {
        self.check_bounds(cell)?;
        if value == 0.0 {
            self.cells.remove(&cell);
        } else {
            self.cells.insert(cell, value);
        }
        Ok(())
    }

    pub fn add(&mut self, cell: Cell, delta: f64) -> Result<()> {
        let value = self.get(cell) + delta;
        self.set(cell, value)
    }

    fn check_bounds(&self, cell: Cell) -> Result<()> {
        if cell.row < self.n && cell.col < self.n {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "cell ({}, {}) outside {}x{} grid",
                cell.row, cell.col, self.n, self.n
            )))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.cells.iter().map(|(&c, &v)| (c, v))
    }

    pub fn active_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.cells.values().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.cells.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Drop every cell with `|phi| < eps`; returns how many were removed.
    pub fn prune(&mut self, eps: f64) -> usize {
        let before = self.cells.len();
        self.cells.retain(|_, v| v.abs() >= eps);
        before - self.cells.len()
    }

    /// Cells an update must visit: every active cell and its in-grid neighbours.
    fn update_set(&self, into: &mut Vec<Cell>) {
        for &cell in self.cells.keys() {
            into.push(cell);
            into.extend(cell.neighbors(self.n));
        }
    }
}

/// Advance a sparse field by one step; no source, no pruning.
pub fn sparse_evolve_step(
    field: &SparseField,
    mask: &impl ImportanceLookup,
    params: &FieldParams,
) -> Result<SparseField> {
    evolve_coupled(field, mask, params, &[])
}

/// Forward-only lookup into a sorted map. Successive queries must be
/// non-decreasing, which holds for any fixed stencil offset applied to a
/// sorted sweep, so a whole step costs linear time in the active cells.
struct Cursor<'a> {
    iter: Peekable<btree_map::Iter<'a, Cell, f64>>,
}

impl<'a> Cursor<'a> {
    fn new(cells: &'a BTreeMap<Cell, f64>) -> Self {
        Self {
            iter: cells.iter().peekable(),
        }
    }

    fn at(&mut self, key: Cell) -> f64 {
        while let Some(&(&cell, &value)) = self.iter.peek() {
            match cell.cmp(&key) {
                Ordering::Less => {
                    self.iter.next();
                }
                Ordering::Equal => return value,
                Ordering::Greater => return 0.0,
            }
        }
        0.0
    }
}

/// One step with extra linear coupling terms `sum_j k_j * (phi_j - phi)`.
/// All inputs are pre-step values.
pub(crate) fn evolve_coupled(
    field: &SparseField,
    mask: &impl ImportanceLookup,
    params: &FieldParams,
    couplings: &[(f64, &SparseField)],
) -> Result<SparseField> {
    let n = field.n;
    let mut touched = Vec::with_capacity(5 * field.cells.len());
    field.update_set(&mut touched);
    for &(k, other) in couplings {
        if k != 0.0 {
            touched.extend(other.cells.keys().copied());
        }
    }
    touched.sort_unstable();
    touched.dedup();

    let mut centre = Cursor::new(&field.cells);
    let mut up = Cursor::new(&field.cells);
    let mut down = Cursor::new(&field.cells);
    let mut left = Cursor::new(&field.cells);
    let mut right = Cursor::new(&field.cells);
    let mut others: Vec<(f64, Cursor)> = couplings
        .iter()
        .filter(|(k, _)| *k != 0.0)
        .map(|&(k, other)| (k, Cursor::new(&other.cells)))
        .collect();

    let mut cells = Vec::with_capacity(touched.len());
    for cell in touched {
        let phi = centre.at(cell);
        let lap = laplacian_at(cell, n, params.spacing, |c| {
            if c == cell {
                phi
            } else if c.row < cell.row {
                up.at(c)
            } else if c.row > cell.row {
                down.at(c)
            } else if c.col < cell.col {
                left.at(c)
            } else {
                right.at(c)
            }
        });
        let mut coupling = 0.0;
        for (k, other) in &mut others {
            coupling += *k * (other.at(cell) - phi);
        }
        let value = check_finite(
            cell,
            euler_update(phi, lap, mask.importance_at(cell), params, coupling),
        )?;
        if value != 0.0 {
            cells.push((cell, value));
        }
    }
    Ok(SparseField {
        n,
        cells: cells.into_iter().collect(),
        time: field.time + params.dt,
    })
}

/// Importance mask with floor semantics for absent cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMask {
    floor: f64,
    cells: BTreeMap<Cell, f64>,
}

impl SparseMask {
    pub fn new(floor: f64) -> Self {
        Self {
            floor,
            cells: BTreeMap::new(),
        }
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.cells.get(&cell).copied().unwrap_or(self.floor)
    }

    /// Values at or below the floor are stored as absent.
    pub fn set(&mut self, cell: Cell, value: f64) {
        if value > self.floor {
            self.cells.insert(cell, value);
        } else {
            self.cells.remove(&cell);
        }
    }

    /// `I(cell) <- max(I(cell), value)`.
    pub fn raise_to(&mut self, cell: Cell, value: f64) {
        if value > self.get(cell) {
            self.set(cell, value);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.cells.iter().map(|(&c, &v)| (c, v))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// One step of the importance ODE, matching [`crate::field::evolve_mask`].
    pub fn evolve(&mut self, params: &FieldParams, access_events: &[(Cell, f64)]) {
        let retain = 1.0 - params.beta * params.dt;
        let floor = self.floor;
        if retain != 1.0 {
            self.cells.retain(|_, v| {
                *v = floor.max(*v * retain);
                *v > floor
            });
        }
        let clamp = params.mask_clamp();
        for &(cell, weight) in access_events {
            let boosted = self.get(cell) + params.gamma * weight;
            self.set(cell, boosted.min(clamp));
        }
    }

    /// Entries whose field cell is gone revert to the floor.
    pub fn co_prune(&mut self, field: &SparseField) -> usize {
        let before = self.cells.len();
        self.cells.retain(|c, _| field.contains(*c));
        before - self.cells.len()
    }

    pub fn to_dense(&self, n: usize) -> ImportanceMask {
        let mut dense = ImportanceMask::uniform(n, self.floor);
        for (&cell, &v) in &self.cells {
            dense.set(cell, v);
        }
        dense
    }
}

impl ImportanceLookup for SparseMask {
    fn importance_at(&self, cell: Cell) -> f64 {
        self.get(cell)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{evolve_mask, evolve_step, NoImportance};
    use proptest::prelude::*;

    fn params(n: usize) -> FieldParams {
        FieldParams {
            grid_size: n,
            ..FieldParams::default()
        }
    }

    #[test]
    fn empty_stays_empty() {
        let f = SparseField::new(16);
        let next = sparse_evolve_step(&f, &NoImportance, &params(16)).unwrap();
        assert!(next.is_empty());
    }

    #[test]
    fn impulse_grows_to_stencil_support() {
        let mut f = SparseField::new(16);
        f.set(Cell::new(7, 7), 1.0).unwrap();
        let next = sparse_evolve_step(&f, &NoImportance, &params(16)).unwrap();
        assert_eq!(next.active_count(), 5);
        for nb in Cell::new(7, 7).neighbors(16) {
            assert!(next.get(nb) > 0.0);
        }
    }

    #[test]
    fn corner_impulse_halo_stays_in_grid() {
        let mut f = SparseField::new(8);
        f.set(Cell::new(0, 0), 1.0).unwrap();
        let next = sparse_evolve_step(&f, &NoImportance, &params(8)).unwrap();
        assert_eq!(next.active_count(), 3);
    }

    #[test]
    fn out_of_grid_cells_rejected() {
        let mut f = SparseField::new(8);
        assert!(f.set(Cell::new(8, 0), 1.0).is_err());
    }

    #[test]
    fn prune_thresholds() {
        let mut all_big = SparseField::new(8);
        all_big.set(Cell::new(1, 1), 1.0).unwrap();
        all_big.set(Cell::new(2, 2), -0.5).unwrap();
        let snapshot = all_big.clone();
        assert_eq!(all_big.prune(1e-6), 0);
        assert_eq!(all_big, snapshot);

        let mut all_small = SparseField::new(8);
        all_small.set(Cell::new(1, 1), 1e-8).unwrap();
        all_small.set(Cell::new(3, 1), -5e-7).unwrap();
        assert_eq!(all_small.prune(1e-6), 2);
        assert!(all_small.is_empty());
    }

    #[test]
    fn prune_removes_exactly_sub_threshold_cells() {
        let eps = 1e-6;
        let values = [3e-7, -2e-6, 1e-6, -9.99e-7, 0.4, 5e-9, -1.0, 2e-6];
        let mut f = SparseField::new(8);
        for (i, &v) in values.iter().enumerate() {
            f.set(Cell::new(i, i), v).unwrap();
        }
        // Filter oracle over the cell list.
        let expected: Vec<(Cell, f64)> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() >= eps)
            .map(|(i, &v)| (Cell::new(i, i), v))
            .collect();
        let removed = f.prune(eps);
        assert_eq!(removed, values.len() - expected.len());
        assert_eq!(f.iter().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn decays_to_empty_when_pruned_each_step() {
        let p = FieldParams {
            grid_size: 16,
            diffusion: 0.0,
            decay: 0.02,
            dt: 0.1,
            alpha: 0.0,
            ..FieldParams::default()
        };
        let mut f = SparseField::new(16);
        f.set(Cell::new(5, 5), 1.0).unwrap();
        // 1 * 0.998^n < 1e-6  =>  n > ln(1e-6)/ln(0.998)
        let predicted = ((p.prune_eps).ln() / (1.0 - p.decay * p.dt).ln()).ceil() as usize;
        let mut steps = 0;
        while !f.is_empty() {
            f = sparse_evolve_step(&f, &NoImportance, &p).unwrap();
            f.prune(p.prune_eps);
            steps += 1;
            assert!(steps <= predicted + 1);
        }
        assert!(steps.abs_diff(predicted) <= 1, "{steps} vs {predicted}");
    }

    #[test]
    fn isolated_zero_cell_stays_zero() {
        let mut f = SparseField::new(16);
        f.set(Cell::new(2, 2), 1.0).unwrap();
        let next = sparse_evolve_step(&f, &NoImportance, &params(16)).unwrap();
        assert_eq!(next.get(Cell::new(10, 10)), 0.0);
        assert_eq!(next.get(Cell::new(2, 4)), 0.0);
    }

    #[test]
    fn sparse_mask_matches_dense_mask() {
        let p = FieldParams {
            beta: 0.05,
            gamma: 0.7,
            ..params(8)
        };
        let mut sparse = SparseMask::new(0.1);
        sparse.set(Cell::new(1, 2), 0.9);
        sparse.set(Cell::new(4, 4), 0.2);
        let mut dense = sparse.to_dense(8);
        let events = [(Cell::new(1, 2), 1.0), (Cell::new(7, 7), 2.0)];
        for _ in 0..50 {
            sparse.evolve(&p, &events);
            dense = evolve_mask(&dense, &p, &events);
        }
        assert_eq!(sparse.to_dense(8), dense);
    }

    #[test]
    fn co_prune_reverts_mask_to_floor() {
        let mut field = SparseField::new(8);
        field.set(Cell::new(1, 1), 1.0).unwrap();
        let mut mask = SparseMask::new(0.05);
        mask.set(Cell::new(1, 1), 0.5);
        mask.set(Cell::new(2, 2), 0.5);
        assert_eq!(mask.co_prune(&field), 1);
        assert_eq!(mask.get(Cell::new(2, 2)), 0.05);
        assert_eq!(mask.get(Cell::new(1, 1)), 0.5);
    }

    fn arb_field(n: usize) -> impl Strategy<Value = DenseField> {
        prop::collection::vec(prop_oneof![3 => Just(0.0), 1 => -1.0f64..1.0], n * n)
            .prop_map(move |v| DenseField::from_values(n, v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prune_is_idempotent(dense in arb_field(8), eps in 1e-3f64..0.5) {
            let mut once = SparseField::from_dense(&dense);
            once.prune(eps);
            let mut twice = once.clone();
            prop_assert_eq!(twice.prune(eps), 0);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn matches_dense_engine(dense in arb_field(12), steps in 1usize..40) {
            let p = FieldParams { grid_size: 12, ..FieldParams::default() };
            let mut mask = ImportanceMask::uniform(12, 0.0);
            mask.set(Cell::new(3, 3), 1.0);
            mask.set(Cell::new(6, 2), 0.4);
            let mut d = dense.clone();
            let mut s = SparseField::from_dense(&dense);
            for _ in 0..steps {
                d = evolve_step(&d, &mask, &p, None).unwrap();
                s = sparse_evolve_step(&s, &mask, &p).unwrap();
            }
            let sd = s.to_dense();
            for (a, b) in sd.values().iter().zip(d.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
