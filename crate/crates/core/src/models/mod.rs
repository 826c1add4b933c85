//! Discrete grid forecasters, the continuous Gaussian baseline, and their
//! shared training loop.

pub mod checkpoint;
pub mod continuous;
pub mod discrete;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, VruSample};
use crate::grid::{CellIndex, DistributionViolation, Grid, GridDistribution};
use crate::nn::NnError;
use crate::targets::TargetError;

pub use continuous::{bivariate_nll, train_continuous, ContinuousKind, ContinuousModel, GaussianForecast, GaussianForecastSet};
pub use discrete::{train_discrete, DiscreteKind, DiscreteModel, DiscreteModelConfig};
pub use train::{fit, ExclusionCounts, TrainConfig, TrainReport, Trainable};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("forecast for horizon {horizon} is not a distribution: {violation}")]
    InvalidForecast {
        horizon: usize,
        violation: DistributionViolation,
    },
    #[error("input mismatch: {0}")]
    Input(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Targets(#[from] TargetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Checks that forecast horizons are positive and strictly increasing.
pub fn validate_horizons(horizons: &[f64]) -> Result<(), ModelError> {
    if horizons.is_empty() {
        return Err(ModelError::Config("no forecast horizons".into()));
    }
    let ok = horizons.iter().all(|t| t.is_finite() && *t > 0.0) && horizons.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(ModelError::Config(format!(
            "horizons must be positive and strictly increasing, got {horizons:?}"
        )))
    }
}

/// One discrete distribution per forecast horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub horizons: Vec<f64>,
    pub dists: Vec<GridDistribution>,
}

impl ForecastSet {
    pub fn new(horizons: Vec<f64>, dists: Vec<GridDistribution>) -> Result<Self, ModelError> {
        if horizons.len() != dists.len() {
            return Err(ModelError::Input(format!(
                "{} horizons but {} distributions",
                horizons.len(),
                dists.len()
            )));
        }
        for (horizon, d) in dists.iter().enumerate() {
            d.validate()
                .map_err(|violation| ModelError::InvalidForecast { horizon, violation })?;
        }
        Ok(Self { horizons, dists })
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }
}

/// Anything that turns a sample into per-horizon grid distributions.
pub trait Forecaster: Sync {
    fn name(&self) -> String;
    fn grid(&self) -> Grid;
    fn horizons(&self) -> &[f64];
    fn forecast(&self, sample: &VruSample) -> Result<ForecastSet, ModelError>;

    /// Forecasts in input order.
    fn forecast_all(&self, samples: &[VruSample]) -> Result<Vec<ForecastSet>, ModelError> {
        samples.iter().map(|s| self.forecast(s)).collect()
    }
}

/// All mass on the current cell at every horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceBaseline {
    pub grid: Grid,
    pub horizons: Vec<f64>,
}

impl Forecaster for PersistenceBaseline {
    fn name(&self) -> String {
        "persistence".into()
    }

    fn grid(&self) -> Grid {
        self.grid
    }

    fn horizons(&self) -> &[f64] {
        &self.horizons
    }

    fn forecast(&self, _sample: &VruSample) -> Result<ForecastSet, ModelError> {
        let center: CellIndex = self.grid.center();
        let d = GridDistribution::one_hot(self.grid, center).expect("center is in bounds");
        ForecastSet::new(self.horizons.clone(), vec![d; self.horizons.len()])
    }
}
