use std::io::Write;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::grid::{CellIndex, GridDistribution};
use crate::scene::{ObstacleKind, ObstacleMask};

/// Default number of reliability bins.
pub const DEFAULT_BINS: usize = 20;

/// Slack used when comparing accumulated probabilities against a level, so
/// that sums like `0.1 + 0.2` count as reaching `0.3`.
pub const LEVEL_TOLERANCE: f64 = 1e-12;

/// Total probability of the cells at least as probable as the truth cell.
pub fn confidence_level(d: &GridDistribution, y: CellIndex) -> Result<f64, MetricsError> {
    d.grid().check(y)?;
    d.validate()?;
    let py = d.prob(y);
    Ok(d.probs().iter().filter(|&&p| p >= py).sum())
}

/// Fraction of confidence levels not above `level`.
pub fn observed_frequency(cs: &[f64], level: f64) -> Result<f64, MetricsError> {
    if cs.is_empty() {
        return Err(MetricsError::Empty("confidence levels"));
    }
    let hits = cs.iter().filter(|&&c| c <= level + LEVEL_TOLERANCE).count();
    Ok(hits as f64 / cs.len() as f64)
}

/// Index of the equal-width bin over `(0, 1]` holding `c`; bin `b` covers
/// `(b / bins, (b + 1) / bins]`.
pub fn bin_index(c: f64, bins: usize) -> usize {
    let b = ((c - LEVEL_TOLERANCE) * bins as f64).ceil() as i64 - 1;
    b.clamp(0, bins as i64 - 1) as usize
}

/// Representative level of bin `b`: its upper edge.
pub fn bin_level(b: usize, bins: usize) -> f64 {
    (b + 1) as f64 / bins as f64
}

/// Binned observed frequencies for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub bins: usize,
    /// Upper bin edges.
    pub levels: Vec<f64>,
    /// Confidence levels falling in each bin.
    pub counts: Vec<usize>,
    /// Observed frequency at each level.
    pub observed: Vec<f64>,
}

impl ReliabilityCurve {
    pub fn samples(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Count-weighted mean gap between level and observed frequency.
    pub fn calibration_error(&self) -> f64 {
        let m = self.samples() as f64;
        self.levels
            .iter()
            .zip(&self.observed)
            .zip(&self.counts)
            .map(|((l, f), &j)| j as f64 * (l - f).abs())
            .sum::<f64>()
            / m
    }

    /// CSV with header `level,observed_frequency,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "level,observed_frequency,count")?;
        for ((l, f), j) in self.levels.iter().zip(&self.observed).zip(&self.counts) {
            writeln!(out, "{l:?},{f:?},{j}")?;
        }
        Ok(())
    }
}

pub fn reliability_curve(cs: &[f64], bins: usize) -> Result<ReliabilityCurve, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::InvalidBins);
    }
    if cs.is_empty() {
        return Err(MetricsError::Empty("confidence levels"));
    }
    let mut counts = vec![0usize; bins];
    for &c in cs {
        counts[bin_index(c, bins)] += 1;
    }
    let levels: Vec<f64> = (0..bins).map(|b| bin_level(b, bins)).collect();
    let observed = levels
        .iter()
        .map(|&l| observed_frequency(cs, l))
        .collect::<Result<_, _>>()?;
    Ok(ReliabilityCurve {
        bins,
        levels,
        counts,
        observed,
    })
}

/// Calibration error over horizons: the mean of the per-horizon
/// count-weighted gaps, i.e. `1 / (|T| M)` times the double sum when every
/// horizon has `M` samples.
pub fn ece(cs_per_horizon: &[Vec<f64>], bins: usize) -> Result<f64, MetricsError> {
    if cs_per_horizon.is_empty() {
        return Err(MetricsError::Empty("horizons"));
    }
    let mut total = 0.0;
    for cs in cs_per_horizon {
        total += reliability_curve(cs, bins)?.calibration_error();
    }
    Ok(total / cs_per_horizon.len() as f64)
}

/// Probability threshold and area (m^2) of the smallest cell set reaching
/// `level`. All cells tied at the threshold are included.
pub fn confidence_region(d: &GridDistribution, level: f64) -> Result<(f64, f64), MetricsError> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(MetricsError::InvalidLevel(level));
    }
    let mut sorted = d.probs().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut tau = None;
    for &p in &sorted {
        acc += p;
        if acc >= level - LEVEL_TOLERANCE {
            tau = Some(p);
            break;
        }
    }
    let tau = tau.unwrap_or_else(|| sorted.iter().rev().copied().find(|&p| p > 0.0).unwrap_or(0.0));
    let cells = d.probs().iter().filter(|&&p| p >= tau).count();
    Ok((tau, cells as f64 * d.grid().cell_area()))
}

pub fn confidence_area(d: &GridDistribution, level: f64) -> Result<f64, MetricsError> {
    Ok(confidence_region(d, level)?.1)
}

/// Mean over horizons of the mean area divided by the horizon.
pub fn sharpness(mean_areas: &[f64], horizons: &[f64]) -> Result<f64, MetricsError> {
    time_normalized_mean(mean_areas, horizons)
}

fn time_normalized_mean(values: &[f64], horizons: &[f64]) -> Result<f64, MetricsError> {
    if values.len() != horizons.len() {
        return Err(MetricsError::LengthMismatch {
            left: values.len(),
            right: horizons.len(),
        });
    }
    if values.is_empty() {
        return Err(MetricsError::Empty("horizons"));
    }
    Ok(values.iter().zip(horizons).map(|(v, t)| v / t).sum::<f64>() / values.len() as f64)
}

/// Probability-weighted distance (m) from the cell centers to the truth cell
/// center.
pub fn weighted_error(d: &GridDistribution, y: CellIndex) -> Result<f64, MetricsError> {
    let grid = d.grid();
    grid.check(y)?;
    let c = grid.cell_center(y);
    Ok(d.probs()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = grid.cell_center(grid.unflat(i));
            p * (g[0] - c[0]).hypot(g[1] - c[1])
        })
        .sum())
}

/// Mean weighted error over samples for one horizon.
pub fn waee(ds: &[GridDistribution], ys: &[CellIndex]) -> Result<f64, MetricsError> {
    if ds.len() != ys.len() {
        return Err(MetricsError::LengthMismatch {
            left: ds.len(),
            right: ys.len(),
        });
    }
    if ds.is_empty() {
        return Err(MetricsError::Empty("forecasts"));
    }
    let mut total = 0.0;
    for (d, &y) in ds.iter().zip(ys) {
        total += weighted_error(d, y)?;
    }
    Ok(total / ds.len() as f64)
}

/// Mean over horizons of WAEE divided by the horizon.
pub fn aswaee(waee_per_horizon: &[f64], horizons: &[f64]) -> Result<f64, MetricsError> {
    time_normalized_mean(waee_per_horizon, horizons)
}

/// Forecast mass on static obstacles.
pub fn occupancy(d: &GridDistribution, o: &ObstacleMask) -> Result<f64, MetricsError> {
    if o.grid() != d.grid() {
        return Err(MetricsError::GridMismatch);
    }
    if o.kind() != ObstacleKind::Occupancy {
        return Err(MetricsError::WrongMaskKind);
    }
    Ok(d.probs()
        .iter()
        .zip(o.cells())
        .filter(|(_, &m)| m)
        .map(|(p, _)| p)
        .sum())
}

/// Mean occupancy over a batch.
pub fn mean_occupancy(ds: &[GridDistribution], os: &[ObstacleMask]) -> Result<f64, MetricsError> {
    if ds.len() != os.len() {
        return Err(MetricsError::LengthMismatch {
            left: ds.len(),
            right: os.len(),
        });
    }
    if ds.is_empty() {
        return Err(MetricsError::Empty("forecasts"));
    }
    let mut total = 0.0;
    for (d, o) in ds.iter().zip(os) {
        total += occupancy(d, o)?;
    }
    Ok(total / ds.len() as f64)
}
