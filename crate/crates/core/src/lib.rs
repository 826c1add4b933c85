//! Grid-based probabilistic forecasting of pedestrian and cyclist positions,
//! with calibration-aware evaluation of discrete and Gaussian forecasts.

pub mod calibration;
pub mod data;
pub mod features;
pub mod grid;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pgm;
pub mod scene;
pub mod targets;

pub use calibration::{apply_temperature, fit_temperature, sweep_sigma, CalibrationReport, TemperatureSchedule};
pub use data::{load_dataset, save_dataset, split_by_location, synthesize, Dataset, Manifest, SynthConfig};
pub use features::{FeatureLayout, FeatureVector, MotionType, Normalizer, VruSample, VruType};
pub use grid::{CellIndex, Grid, GridDistribution, GridError};
pub use metrics::{MetricsReport, ReliabilityCurve};
pub use models::{
    ContinuousKind, ContinuousModel, DiscreteKind, DiscreteModel, DiscreteModelConfig, ForecastSet, Forecaster, GaussianForecast,
    PersistenceBaseline, TrainConfig, TrainReport,
};
pub use scene::{ObstacleKind, ObstacleMask, SemanticCategory, SemanticMap};
pub use targets::SmoothingSchedule;
