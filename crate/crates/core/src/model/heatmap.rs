use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric geometry of the heatmap grid.
///
/// Cell `(ix, iy)` covers `[origin.x + ix·cell, origin.x + (ix+1)·cell)` by the
/// analogous `y` interval. Cells are stored row-major with `y` as the row:
/// `index = iy · nx + ix`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cells along x (the heatmap length `l`).
    pub nx: usize,
    /// Cells along y (the heatmap width `w`).
    pub ny: usize,
    /// Lower-left corner in metres.
    pub origin: [f64; 2],
    /// Edge length of one square cell in metres.
    pub cell_size: f64,
}

impl Default for GridSpec {
    /// 16×16 cells over a 64 m × 64 m window centred on the target agent.
    fn default() -> Self {
        Self {
            nx: 16,
            ny: 16,
            origin: [-32.0, -32.0],
            cell_size: 4.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Config(format!(
                "heatmap grid must be at least 2x2, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::Config(format!(
                "cell size must be positive, got {}",
                self.cell_size
            )));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn extent(&self) -> [f64; 2] {
        [
            self.nx as f64 * self.cell_size,
            self.ny as f64 * self.cell_size,
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.cell_coords(p).is_some()
    }

    /// Integer cell coordinates `(ix, iy)` of a point, if it lies on the grid.
    pub fn cell_coords(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fx = (p[0] - self.origin[0]) / self.cell_size;
        let fy = (p[1] - self.origin[1]) / self.cell_size;
        if !(fx.is_finite() && fy.is_finite()) || fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        (ix < self.nx && iy < self.ny).then_some((ix, iy))
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<usize> {
        self.cell_coords(p).map(|(ix, iy)| iy * self.nx + ix)
    }

    pub fn center(&self, index: usize) -> [f64; 2] {
        let (ix, iy) = (index % self.nx, index / self.nx);
        [
            self.origin[0] + (ix as f64 + 0.5) * self.cell_size,
            self.origin[1] + (iy as f64 + 0.5) * self.cell_size,
        ]
    }
}

/// Probability mass over the grid cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Heatmap {
    /// Wraps raw cell values, checking non-negativity and normalisation.
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.cells() {
            return Err(Error::Input(format!(
                "heatmap has {} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Input("heatmap cells must be finite and >= 0".into()));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("heatmap sums to {total}, expected 1")));
        }
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: GridSpec) -> Self {
        let n = grid.cells();
        Self {
            grid,
            values: vec![1.0 / n as f64; n],
        }
    }

    /// Softmax of `logits` without validation; used on the forward path.
    pub(crate) fn from_softmax(grid: GridSpec, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), grid.cells());
        Self {
            grid,
            values: probs,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.grid.nx == other.grid.nx && self.grid.ny == other.grid.ny
    }

    /// Index of the most probable cell (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }
}
