//! Truncated size grid on `(y0, y_max)` and cell-averaged densities.
//!
//! Moments use the midpoint rule (`sum c_i^s u_i w_i`), which is also the
//! exact moment of the piecewise-constant reconstruction for `s in {0, 1}`.
//! Projection of a density onto the grid averages it per cell with a
//! three-point Gauss rule.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::gauss3;

/// Fraction of `y_max` beyond which bound monomers count as tail mass.
pub const TAIL_FRACTION: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("bad grid bounds: need y_max > y0 > 0, got y0={y0}, y_max={y_max}")]
    BadBounds { y0: f64, y_max: f64 },
    #[error("too few cells: {0} (need at least 4)")]
    TooFewCells(usize),
    #[error("non-finite sample of the projected density at y={0}")]
    NonFiniteSample(f64),
    #[error("grid function length {got} does not match cell count {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Requested cell layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Uniform,
    Geometric,
}

/// Realised cell layout; geometric grids record their width ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridKind {
    Uniform,
    Geometric { ratio: f64 },
}

/// Where a point lands relative to the cell centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PivotSplit {
    /// Point lies in `[c_lower, c_lower+1]`; `upper_weight` is the share
    /// assigned to `lower + 1` so that mass and first moment are preserved.
    Between { lower: usize, upper_weight: f64 },
    /// Point lies in `(c_last, y_max]`.
    AboveLastCenter,
    /// Point lies beyond `y_max`.
    Outside,
    /// Point lies in `[y0, c_0)`.
    BelowFirstCenter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeGrid {
    y0: f64,
    y_max: f64,
    edges: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
    kind: GridKind,
}

impl SizeGrid {
    pub fn build(y0: f64, y_max: f64, n_cells: usize, spacing: Spacing) -> Result<Self, GridError> {
        if !(y0 > 0.0 && y_max > y0 && y_max.is_finite()) {
            return Err(GridError::BadBounds { y0, y_max });
        }
        if n_cells < 4 {
            return Err(GridError::TooFewCells(n_cells));
        }
        let n = n_cells as f64;
        let (mut edges, kind): (Vec<f64>, GridKind) = match spacing {
            Spacing::Uniform => {
                let h = (y_max - y0) / n;
                (
                    (0..=n_cells).map(|i| y0 + h * i as f64).collect(),
                    GridKind::Uniform,
                )
            }
            Spacing::Geometric => {
                let ratio = (y_max / y0).powf(1.0 / n);
                let log_span = (y_max / y0).ln();
                (
                    (0..=n_cells)
                        .map(|i| y0 * (log_span * i as f64 / n).exp())
                        .collect(),
                    GridKind::Geometric { ratio },
                )
            }
        };
        edges[0] = y0;
        edges[n_cells] = y_max;
        let centers = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
        let widths = edges.windows(2).map(|e| e[1] - e[0]).collect();
        Ok(Self {
            y0,
            y_max,
            edges,
            centers,
            widths,
            kind,
        })
    }

    pub fn uniform(y0: f64, y_max: f64, n_cells: usize) -> Result<Self, GridError> {
        Self::build(y0, y_max, n_cells, Spacing::Uniform)
    }

    pub fn geometric(y0: f64, y_max: f64, n_cells: usize) -> Result<Self, GridError> {
        Self::build(y0, y_max, n_cells, Spacing::Geometric)
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn n_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn max_width(&self) -> f64 {
        self.widths.iter().cloned().fold(0.0, f64::max)
    }

    /// Index of the cell containing `y`, with the right edge of the last
    /// cell included.
    pub fn locate(&self, y: f64) -> Option<usize> {
        if !(y >= self.y0 && y <= self.y_max) {
            return None;
        }
        let idx = self.edges.partition_point(|&e| e <= y);
        Some(idx.saturating_sub(1).min(self.n_cells() - 1))
    }

    /// Two-pivot split of a point mass at `y` between the bracketing
    /// centers.
    pub fn pivot_split(&self, y: f64) -> PivotSplit {
        let last = self.n_cells() - 1;
        if y > self.y_max {
            return PivotSplit::Outside;
        }
        if y < self.centers[0] {
            return PivotSplit::BelowFirstCenter;
        }
        if y > self.centers[last] {
            return PivotSplit::AboveLastCenter;
        }
        if y == self.centers[last] {
            return PivotSplit::Between {
                lower: last - 1,
                upper_weight: 1.0,
            };
        }
        let k = self.centers.partition_point(|&c| c <= y) - 1;
        let lo = self.centers[k];
        let hi = self.centers[k + 1];
        PivotSplit::Between {
            lower: k,
            upper_weight: (y - lo) / (hi - lo),
        }
    }
}

/// Cell-averaged density on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<SizeGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Arc<SizeGrid>) -> Self {
        let n = grid.n_cells();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(grid: Arc<SizeGrid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n_cells() {
            return Err(GridError::LengthMismatch {
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<SizeGrid> {
        &self.grid
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

    /// Midpoint-rule moment `sum c_i^s u_i w_i`.
    pub fn moment(&self, s: f64) -> f64 {
        moment(self, s)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// First moment carried by cells whose center exceeds
    /// `TAIL_FRACTION * y_max`.
    pub fn tail_mass(&self) -> f64 {
        let cut = TAIL_FRACTION * self.grid.y_max();
        let g = &self.grid;
        g.centers()
            .iter()
            .zip(g.widths())
            .zip(&self.values)
            .filter(|((c, _), _)| **c > cut)
            .map(|((c, w), u)| c * u * w)
            .sum()
    }

    /// Largest center whose value exceeds `eps`, or `y0` if none does.
    pub fn numeric_support(&self, eps: f64) -> f64 {
        self.values
            .iter()
            .rposition(|&u| u > eps)
            .map(|i| self.grid.centers()[i])
            .unwrap_or(self.grid.y0())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|u| u * factor).collect(),
        }
    }
}

/// `sum_i c_i^s u_i w_i`; `s = 0` is the polymer count, `s = 1` the bound
/// monomer count.
pub fn moment(u: &GridFunction, s: f64) -> f64 {
    let g = u.grid();
    let pow: fn(f64, f64) -> f64 = |c, s| {
        if s == 0.0 {
            1.0
        } else if s == 1.0 {
            c
        } else if s == 2.0 {
            c * c
        } else {
            c.powf(s)
        }
    };
    g.centers()
        .iter()
        .zip(g.widths())
        .zip(u.values())
        .map(|((c, w), v)| pow(*c, s) * v * w)
        .sum()
}

/// Cell averages of `f` by a three-point Gauss rule per cell.
pub fn project<F: Fn(f64) -> f64>(f: F, grid: Arc<SizeGrid>) -> Result<GridFunction, GridError> {
    let mut values = Vec::with_capacity(grid.n_cells());
    for (e, w) in grid.edges().windows(2).zip(grid.widths()) {
        let avg = gauss3(e[0], e[1], &f) / w;
        if !avg.is_finite() {
            return Err(GridError::NonFiniteSample(0.5 * (e[0] + e[1])));
        }
        values.push(avg);
    }
    Ok(GridFunction { grid, values })
}
