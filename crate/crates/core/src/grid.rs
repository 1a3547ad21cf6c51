//! Square per-object grids of real values (ROI cells), stored row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ROI side length: a 7×7 grid of sample points per object.
pub const DEFAULT_SIDE: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    side: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidInput("grid side must be at least 1".into()));
        }
        if values.len() != side * side {
            return Err(Error::ShapeMismatch {
                expected: side * side,
                actual: values.len(),
            });
        }
        Ok(Self { side, values })
    }

    pub fn filled(side: usize, value: f64) -> Self {
        assert!(side > 0, "grid side must be at least 1");
        Self {
            side,
            values: vec![value; side * side],
        }
    }

    pub fn zeros(side: usize) -> Self {
        Self::filled(side, 0.0)
    }

    /// Builds a grid from a flat vector whose length is a perfect square.
    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        let side = (values.len() as f64).sqrt().round() as usize;
        Self::new(side, values)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.index(row, col)]
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.side && col < self.side);
        row * self.side + col
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.side, index % self.side)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            side: self.side,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn check_same_shape(&self, other: &Grid) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch {
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        Ok(())
    }
}
