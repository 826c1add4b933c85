//! Reliability, sharpness, positional accuracy and obstacle consistency of
//! grid and Gaussian forecasts.

pub mod discrete;
pub mod gaussian;
pub mod report;

use thiserror::Error;

use crate::grid::{DistributionViolation, GridError};
use crate::models::ModelError;

pub use discrete::{
    aswaee, bin_index, confidence_area, confidence_level, confidence_region, ece, mean_occupancy, observed_frequency,
    occupancy, reliability_curve, sharpness, waee, weighted_error, ReliabilityCurve, DEFAULT_BINS,
    LEVEL_TOLERANCE,
};
pub use gaussian::{
    gaussian_confidence_area, gaussian_confidence_level, gaussian_waee, mc_confidence_area, mc_confidence_level,
    McEstimate,
};
pub use report::{evaluate_continuous, evaluate_forecaster, EvalOptions, GroupMetrics, MetricsReport, ModelMetrics, ReportHeader};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no {0} to evaluate")]
    Empty(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("forecast and mask grids differ")]
    GridMismatch,
    #[error("occupancy needs a static-obstacle mask")]
    WrongMaskKind,
    #[error("bin count must be positive")]
    InvalidBins,
    #[error("confidence level must lie in (0, 1], got {0}")]
    InvalidLevel(f64),
    #[error("degenerate covariance")]
    DegenerateCovariance,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid distribution: {0}")]
    Distribution(#[from] DistributionViolation),
    #[error(transparent)]
    Model(#[from] ModelError),
}
