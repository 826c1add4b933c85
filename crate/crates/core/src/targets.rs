//! Training target distributions: one-hot, spatially smoothed Gaussian, and
//! the obstacle-masked Gaussian.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellIndex, Grid, GridDistribution, GridError};
use crate::scene::{ObstacleKind, ObstacleMask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("smoothing standard deviation must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("ground-truth cell {0} lies on an obstacle")]
    TruthOnObstacle(CellIndex),
    #[error("every cell carrying target mass is masked")]
    AllMassMasked,
    #[error("mask grid does not match target grid")]
    MaskGridMismatch,
    #[error("expected a training-kind obstacle mask")]
    WrongMaskKind,
}

/// Per-horizon smoothing standard deviations, stored as multiples of the
/// cell edge length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSchedule {
    pub sigma_cells: Vec<f64>,
}

impl SmoothingSchedule {
    pub fn new(sigma_cells: Vec<f64>) -> Result<Self, TargetError> {
        if let Some(&bad) = sigma_cells.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(TargetError::InvalidSigma(bad));
        }
        Ok(Self { sigma_cells })
    }

    /// The same value at every horizon.
    pub fn uniform(sigma_cells: f64, horizons: usize) -> Result<Self, TargetError> {
        Self::new(vec![sigma_cells; horizons])
    }

    /// One-hot training at every horizon.
    pub fn one_hot(horizons: usize) -> Self {
        Self {
            sigma_cells: vec![0.0; horizons],
        }
    }

    /// Schedule selected for the five pedestrian horizons, in cell units.
    pub fn reference_five() -> Self {
        Self {
            sigma_cells: vec![0.48, 0.48, 0.53, 0.55, 0.55],
        }
    }

    pub fn len(&self) -> usize {
        self.sigma_cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_cells.is_empty()
    }

    /// Standard deviation in meters for horizon `k` on `grid`.
    pub fn sigma_meters(&self, k: usize, grid: &Grid) -> f64 {
        self.sigma_cells[k] * grid.cell_size()
    }
}

fn gaussian_weights(grid: &Grid, y: CellIndex, sigma: f64) -> Result<Vec<f64>, TargetError> {
    grid.check(y)?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(TargetError::InvalidSigma(sigma));
    }
    let mut w = vec![0.0; grid.len()];
    if sigma == 0.0 {
        w[grid.flat(y)] = 1.0;
        return Ok(w);
    }
    let c = grid.cell_center(y);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (i, wi) in w.iter_mut().enumerate() {
        let g = grid.cell_center(grid.unflat(i));
        let d2 = (g[0] - c[0]).powi(2) + (g[1] - c[1]).powi(2);
        *wi = (-d2 * inv).exp();
    }
    Ok(w)
}

/// Isotropic Gaussian evaluated at cell centers around `y` and normalized
/// over the grid; `sigma = 0` yields the one-hot target.
pub fn gaussian_target(grid: &Grid, y: CellIndex, sigma: f64) -> Result<GridDistribution, TargetError> {
    let w = gaussian_weights(grid, y, sigma)?;
    Ok(GridDistribution::from_weights(*grid, w).expect("peak weight is 1"))
}

pub fn one_hot_target(grid: &Grid, y: CellIndex) -> Result<GridDistribution, TargetError> {
    Ok(GridDistribution::one_hot(*grid, y)?)
}

/// Gaussian target with obstacle cells zeroed and the rest rescaled to unit
/// sum.
pub fn masked_gaussian_target(
    grid: &Grid,
    y: CellIndex,
    sigma: f64,
    mask: &ObstacleMask,
) -> Result<GridDistribution, TargetError> {
    if mask.grid() != grid {
        return Err(TargetError::MaskGridMismatch);
    }
    if mask.kind() != ObstacleKind::Training {
        return Err(TargetError::WrongMaskKind);
    }
    grid.check(y)?;
    if mask.is_set(y) {
        return Err(TargetError::TruthOnObstacle(y));
    }
    let mut w = gaussian_weights(grid, y, sigma)?;
    for (wi, &m) in w.iter_mut().zip(mask.cells()) {
        if m {
            *wi = 0.0;
        }
    }
    GridDistribution::from_weights(*grid, w).ok_or(TargetError::AllMassMasked)
}
