use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Embedding;
use crate::error::{Error, Result};
use crate::field::Cell;

/// Gain inside `0.5 * (1 + tanh(s * y))`. For unit vectors each projected
/// coordinate is roughly standard normal, and `tanh(0.85 y)` then tracks the
/// normal CDF closely enough to spread memories over most of the grid.
pub const SQUASH_SCALE: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldPosition {
    pub x: f64,
    pub y: f64,
    pub cell: Cell,
}

impl FieldPosition {
    /// `cell = (floor(x N), floor(y N))`, clamped into the grid.
    pub fn from_unit(x: f64, y: f64, grid_size: usize) -> Self {
        let to_index = |u: f64| ((u * grid_size as f64).floor() as usize).min(grid_size - 1);
        Self {
            x,
            y,
            cell: Cell::new(to_index(x), to_index(y)),
        }
    }
}

/// Seeded Gaussian random projection from `d` dimensions to the unit square.
#[derive(Debug, Clone)]
pub struct Projector {
    seed: u64,
    dimension: usize,
    // Row-major 2 x d.
    matrix: Vec<f64>,
}

impl Projector {
    pub fn new(seed: u64, dimension: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = (0..2 * dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            seed,
            dimension,
            matrix,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Raw linear projection `R e`.
    pub fn linear(&self, values: &[f64]) -> Result<(f64, f64)> {
        if values.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: values.len(),
            });
        }
        let (top, bottom) = self.matrix.split_at(self.dimension);
        let dot = |row: &[f64]| row.iter().zip(values).map(|(r, v)| r * v).sum::<f64>();
        Ok((dot(top), dot(bottom)))
    }

    pub fn project(&self, embedding: &Embedding, grid_size: usize) -> Result<FieldPosition> {
        self.project_values(embedding.as_slice(), grid_size)
    }

    pub fn project_values(&self, values: &[f64], grid_size: usize) -> Result<FieldPosition> {
        let (a, b) = self.linear(values)?;
        Ok(FieldPosition::from_unit(squash(a), squash(b), grid_size))
    }
}

fn squash(y: f64) -> f64 {
    0.5 * (1.0 + (SQUASH_SCALE * y).tanh())
}

/// One-shot projection; builds the matrix for this call.
pub fn project(embedding: &Embedding, seed: u64, grid_size: usize) -> Result<FieldPosition> {
    Projector::new(seed, embedding.dimension()).project(embedding, grid_size)
}
