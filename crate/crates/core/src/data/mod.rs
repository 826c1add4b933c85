//! Datasets: manifest conventions, on-disk I/O, location-disjoint splits,
//! rotation augmentation and the synthetic scene generator.

mod augment;
mod io;
mod split;
mod synth;

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, VruSample, JOINT_NAMES, OBS_RATE_HZ, OBS_STEPS};
use crate::grid::{Grid, GridError};
use crate::models::validate_horizons;
use crate::scene::{SceneError, SemanticCategory};

pub use augment::{augment_rotations, augment_rotations_with, rotate_sample};
pub use io::{load_dataset, save_dataset, MANIFEST_FILE, MAPS_DIR, SAMPLES_FILE};
pub use split::{split_by_location, Split, SplitFractions};
pub use synth::{synthesize, Behavior, BehaviorMix, PoseConfig, SceneKind, SynthConfig};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("schema violation in `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("map file {0} is missing")]
    MissingMap(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Json { path: PathBuf, line: usize, message: String },
    #[error("need at least 3 locations to split, found {0}")]
    TooFewLocations(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),
    #[error(transparent)]
    Sample(#[from] FeatureError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn schema(field: &str, reason: impl Into<String>) -> DataError {
    DataError::Schema {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Conventions every sample of a dataset follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub grid_side: usize,
    /// Cell edge length in meters.
    pub cell_size: f64,
    pub observation_steps: usize,
    pub observation_rate_hz: f64,
    /// Forecast horizons in seconds, strictly increasing.
    pub horizons: Vec<f64>,
    pub joint_names: Vec<String>,
    pub categories: Vec<String>,
}

impl Manifest {
    pub fn new(grid: Grid, horizons: Vec<f64>) -> Self {
        Self {
            version: DATASET_VERSION,
            grid_side: grid.side(),
            cell_size: grid.cell_size(),
            observation_steps: OBS_STEPS,
            observation_rate_hz: OBS_RATE_HZ,
            horizons,
            joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            categories: SemanticCategory::names(),
        }
    }

    pub fn grid(&self) -> Result<Grid, DataError> {
        Grid::new(self.grid_side, self.cell_size).map_err(|e| schema("grid_side/cell_size", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.version != DATASET_VERSION {
            return Err(DataError::Version {
                found: self.version,
                expected: DATASET_VERSION,
            });
        }
        self.grid()?;
        if self.observation_rate_hz != OBS_RATE_HZ {
            return Err(schema(
                "observation_rate_hz",
                format!("{} Hz, expected {OBS_RATE_HZ}", self.observation_rate_hz),
            ));
        }
        if self.observation_steps != OBS_STEPS {
            return Err(schema(
                "observation_steps",
                format!("{} steps at {OBS_RATE_HZ} Hz, expected {OBS_STEPS}", self.observation_steps),
            ));
        }
        validate_horizons(&self.horizons).map_err(|e| schema("horizons", e.to_string()))?;
        if self.joint_names != JOINT_NAMES {
            return Err(schema("joint_names", "joint order differs from the 13-joint convention"));
        }
        if self.categories != SemanticCategory::names() {
            return Err(schema("categories", "category names differ from the 8-category convention"));
        }
        Ok(())
    }
}

/// Samples sharing one manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<VruSample>,
}

impl Dataset {
    /// Validates the manifest and every sample against it.
    pub fn new(manifest: Manifest, samples: Vec<VruSample>) -> Result<Self, DataError> {
        let ds = Self { manifest, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.manifest.validate()?;
        let grid = self.manifest.grid()?;
        let mut ids = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(schema("id", format!("duplicate sample id {}", s.id)));
            }
            check_sample(s, &grid, self.manifest.horizons.len())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct location ids in first-appearance order.
    pub fn location_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.location_id.as_str()))
            .map(|s| s.location_id.clone())
            .collect()
    }

    pub fn find(&self, id: &str) -> Option<&VruSample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

fn check_sample(s: &VruSample, grid: &Grid, horizons: usize) -> Result<(), DataError> {
    let field = |f: &str| format!("samples[{}].{f}", s.id);
    s.check()?;
    if s.pose.len() != OBS_STEPS {
        return Err(schema(&field("pose"), format!("{} poses, expected {OBS_STEPS}", s.pose.len())));
    }
    if s.futures.len() != horizons {
        return Err(schema(
            &field("futures"),
            format!("{} horizons, manifest has {horizons}", s.futures.len()),
        ));
    }
    if s.map_tc.grid() != grid {
        return Err(schema(&field("map_tc"), "map grid differs from the manifest grid"));
    }
    for (k, f) in s.futures.iter().enumerate() {
        if f.position.iter().any(|v| !v.is_finite()) {
            return Err(schema(&field("futures"), format!("non-finite position at horizon {k}")));
        }
        if f.map.as_ref().is_some_and(|m| m.grid() != grid) {
            return Err(schema(&field("futures"), format!("map grid at horizon {k} differs from the manifest grid")));
        }
    }
    Ok(())
}
