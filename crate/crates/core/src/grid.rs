//! Square forecast grid centered on the road user and discrete probability
//! rasters defined over it.
//!
//! Coordinate convention (used everywhere in this crate): the grid origin is
//! the center of the middle cell, the column index grows with `+x` (right)
//! and the row index grows with `+y` (forward). Rasters are stored row-major,
//! `index = row * side + col`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the unit-sum invariant of a [`GridDistribution`].
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid side must be an odd integer >= 3, got {0}")]
    InvalidSide(usize),
    #[error("cell size must be a positive finite length, got {0}")]
    InvalidCellSize(f64),
    #[error("position ({x}, {y}) lies outside the grid half-extent {half_extent}")]
    OutOfGrid { x: f64, y: f64, half_extent: f64 },
    #[error("cell ({row}, {col}) is out of bounds for side {side}")]
    IndexOutOfBounds { row: usize, col: usize, side: usize },
    #[error("raster has {got} entries, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
}

/// Square grid of `side x side` cells with edge length `cell` meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    side: usize,
    cell: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} cells of {} m", self.side, self.side, self.cell)
    }
}

impl Grid {
    /// Builds a grid with an odd number of cells per side so that a unique
    /// center cell exists.
    pub fn new(side: usize, cell: f64) -> Result<Self, GridError> {
        if side < 3 || side.is_multiple_of(2) {
            return Err(GridError::InvalidSide(side));
        }
        if !(cell.is_finite() && cell > 0.0) {
            return Err(GridError::InvalidCellSize(cell));
        }
        Ok(Self { side, cell })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Cell edge length in meters.
    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn cell_area(&self) -> f64 {
        self.cell * self.cell
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Edge length of the covered square in meters.
    pub fn extent(&self) -> f64 {
        self.side as f64 * self.cell
    }

    pub fn half_extent(&self) -> f64 {
        0.5 * self.extent()
    }

    pub fn center(&self) -> CellIndex {
        let c = (self.side - 1) / 2;
        CellIndex::new(c, c)
    }

    pub fn flat(&self, idx: CellIndex) -> usize {
        idx.row * self.side + idx.col
    }

    pub fn unflat(&self, flat: usize) -> CellIndex {
        CellIndex::new(flat / self.side, flat % self.side)
    }

    pub fn contains(&self, idx: CellIndex) -> bool {
        idx.row < self.side && idx.col < self.side
    }

    pub fn check(&self, idx: CellIndex) -> Result<(), GridError> {
        if self.contains(idx) {
            Ok(())
        } else {
            Err(GridError::IndexOutOfBounds {
                row: idx.row,
                col: idx.col,
                side: self.side,
            })
        }
    }

    /// Index of the cell whose center is nearest to `pos`; ties on a cell
    /// boundary go to the smaller index.
    pub fn position_to_cell(&self, pos: [f64; 2]) -> Result<CellIndex, GridError> {
        let half = self.half_extent();
        let [x, y] = pos;
        if !(x.abs() <= half && y.abs() <= half) {
            return Err(GridError::OutOfGrid {
                x,
                y,
                half_extent: half,
            });
        }
        let col = self.axis_index(x).expect("checked against extent");
        let row = self.axis_index(y).expect("checked against extent");
        Ok(CellIndex::new(row, col))
    }

    /// Nearest cell without the extent check; `None` when the position falls
    /// outside the grid.
    pub fn nearest_cell(&self, pos: [f64; 2]) -> Option<CellIndex> {
        let half = self.half_extent();
        if !(pos[0].abs() <= half && pos[1].abs() <= half) {
            return None;
        }
        Some(CellIndex::new(self.axis_index(pos[1])?, self.axis_index(pos[0])?))
    }

    fn axis_index(&self, coord: f64) -> Option<usize> {
        let c = ((self.side - 1) / 2) as f64;
        // ceil(u - 0.5) rounds to nearest with exact halves going down.
        let offset = (coord / self.cell - 0.5).ceil();
        let idx = (offset + c).clamp(0.0, (self.side - 1) as f64);
        if idx.is_finite() {
            Some(idx as usize)
        } else {
            None
        }
    }

    /// Center point `(x, y)` of a cell in meters.
    pub fn cell_to_position(&self, idx: CellIndex) -> Result<[f64; 2], GridError> {
        self.check(idx)?;
        Ok(self.cell_center(idx))
    }

    /// Unchecked variant of [`Grid::cell_to_position`] for hot loops.
    #[inline]
    pub fn cell_center(&self, idx: CellIndex) -> [f64; 2] {
        let c = ((self.side - 1) / 2) as f64;
        [
            (idx.col as f64 - c) * self.cell,
            (idx.row as f64 - c) * self.cell,
        ]
    }

    /// Cell centers of the whole grid in raster order.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.len())
            .map(|i| self.cell_center(self.unflat(i)))
            .collect()
    }
}

/// Reason a raster is not a probability distribution.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionViolation {
    #[error("raster has {got} entries, grid needs {expected}")]
    Shape { got: usize, expected: usize },
    #[error("non-finite probability {value} at {index}")]
    NonFinite { index: CellIndex, value: f64 },
    #[error("negative probability {value} at {index}")]
    Negative { index: CellIndex, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    Sum { sum: f64 },
}

/// Checks non-negativity and unit sum (within [`SUM_TOLERANCE`]).
pub fn validate_distribution(grid: &Grid, probs: &[f64]) -> Result<(), DistributionViolation> {
    if probs.len() != grid.len() {
        return Err(DistributionViolation::Shape {
            got: probs.len(),
            expected: grid.len(),
        });
    }
    let mut sum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() {
            return Err(DistributionViolation::NonFinite {
                index: grid.unflat(i),
                value: p,
            });
        }
        if p < 0.0 {
            return Err(DistributionViolation::Negative {
                index: grid.unflat(i),
                value: p,
            });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(DistributionViolation::Sum { sum });
    }
    Ok(())
}

/// Normalized probability raster over a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    grid: Grid,
    probs: Vec<f64>,
}

impl GridDistribution {
    /// Wraps a raster after validating it.
    pub fn new(grid: Grid, probs: Vec<f64>) -> Result<Self, DistributionViolation> {
        validate_distribution(&grid, &probs)?;
        Ok(Self { grid, probs })
    }

    /// Normalizes non-negative weights to unit sum. Returns `None` when the
    /// weights carry no mass.
    pub fn from_weights(grid: Grid, mut weights: Vec<f64>) -> Option<Self> {
        if weights.len() != grid.len() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return None;
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Some(Self {
            grid,
            probs: weights,
        })
    }

    pub fn uniform(grid: Grid) -> Self {
        let p = 1.0 / grid.len() as f64;
        Self {
            grid,
            probs: vec![p; grid.len()],
        }
    }

    pub fn one_hot(grid: Grid, idx: CellIndex) -> Result<Self, GridError> {
        grid.check(idx)?;
        let mut probs = vec![0.0; grid.len()];
        probs[grid.flat(idx)] = 1.0;
        Ok(Self { grid, probs })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn prob(&self, idx: CellIndex) -> f64 {
        self.probs[self.grid.flat(idx)]
    }

    pub fn validate(&self) -> Result<(), DistributionViolation> {
        validate_distribution(&self.grid, &self.probs)
    }

    /// Most probable cell; the first one in raster order on ties.
    pub fn argmax(&self) -> CellIndex {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        self.grid.unflat(best)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// Rotates the raster counter-clockwise by `quarter_turns * 90` degrees
    /// about the grid center.
    pub fn rotate_quarter(&self, quarter_turns: u32) -> Self {
        Self {
            grid: self.grid,
            probs: rotate_raster_quarter(&self.probs, self.grid.side(), quarter_turns),
        }
    }

    /// CSV with one `row,col,probability` line per cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "row,col,probability")?;
        for (i, p) in self.probs.iter().enumerate() {
            let idx = self.grid.unflat(i);
            writeln!(out, "{},{},{:?}", idx.row, idx.col, p)?;
        }
        Ok(())
    }

    /// 16-bit PGM scaled so that the maximum probability maps to 65535.
    pub fn write_pgm<W: Write>(&self, out: W) -> std::io::Result<()> {
        let max = self.probs.iter().cloned().fold(0.0, f64::max);
        let pixels: Vec<u16> = self
            .probs
            .iter()
            .map(|&p| {
                if max > 0.0 {
                    (p / max * 65535.0).round() as u16
                } else {
                    0
                }
            })
            .collect();
        crate::pgm::write_pgm16(out, self.grid.side(), self.grid.side(), &pixels)
    }

    /// 16-bit PGM on a logarithmic scale spanning `decades` orders of
    /// magnitude below the maximum; smaller values are black.
    pub fn write_log_pgm<W: Write>(&self, out: W, decades: f64) -> std::io::Result<()> {
        let max = self.probs.iter().cloned().fold(0.0, f64::max);
        let pixels: Vec<u16> = self
            .probs
            .iter()
            .map(|&p| {
                if max <= 0.0 || p <= 0.0 {
                    return 0;
                }
                let rel = (p / max).log10() / decades + 1.0;
                (rel.clamp(0.0, 1.0) * 65535.0).round() as u16
            })
            .collect();
        crate::pgm::write_pgm16(out, self.grid.side(), self.grid.side(), &pixels)
    }
}

/// Counter-clockwise quarter-turn rotation of a square row-major raster in
/// the `(x = col, y = row)` frame.
pub fn rotate_raster_quarter<T: Copy>(raster: &[T], side: usize, quarter_turns: u32) -> Vec<T> {
    let mut cur = raster.to_vec();
    for _ in 0..quarter_turns % 4 {
        let mut next = cur.clone();
        // (x, y) -> (-y, x): destination (row, col) reads source (side-1-col, row).
        for row in 0..side {
            for col in 0..side {
                next[row * side + col] = cur[(side - 1 - col) * side + row];
            }
        }
        cur = next;
    }
    cur
}
