use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::discrete::{
    aswaee, confidence_area, confidence_level, occupancy, reliability_curve, sharpness, weighted_error,
    ReliabilityCurve, DEFAULT_BINS,
};
use super::gaussian::{gaussian_confidence_area, gaussian_confidence_level, gaussian_waee};
use super::MetricsError;
use crate::features::{MotionType, VruSample, VruType};
use crate::grid::GridError;
use crate::models::{ContinuousModel, ForecastSet, Forecaster};
use crate::scene::ObstacleKind;

pub const REPORT_VERSION: u32 = 1;
/// Group key covering every VRU type or every motion type.
pub const ALL: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub bins: usize,
    /// Confidence level of the sharpness area.
    pub level: f64,
    /// Draws per Gaussian forecast for the weighted error.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            level: 0.95,
            mc_samples: 2000,
            seed: 0,
        }
    }
}

/// Per-horizon scores of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScores {
    pub vru_type: VruType,
    pub motion_type: MotionType,
    pub confidence: Vec<f64>,
    pub area: Vec<f64>,
    pub error: Vec<f64>,
    pub occupancy: Option<Vec<f64>>,
}

/// Scores a discrete forecast against the sample's truth snapped to cell
/// centers. Returns `None` when a truth leaves the grid.
pub fn score_discrete(fc: &ForecastSet, s: &VruSample, level: f64) -> Result<Option<SampleScores>, MetricsError> {
    if fc.dists.len() != s.futures.len() {
        return Err(MetricsError::LengthMismatch {
            left: fc.dists.len(),
            right: s.futures.len(),
        });
    }
    let mut out = SampleScores {
        vru_type: s.vru_type,
        motion_type: s.motion_type,
        confidence: Vec::new(),
        area: Vec::new(),
        error: Vec::new(),
        occupancy: Some(Vec::new()),
    };
    for (k, d) in fc.dists.iter().enumerate() {
        let y = match d.grid().position_to_cell(s.future_offset(k)) {
            Ok(y) => y,
            Err(GridError::OutOfGrid { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        out.confidence.push(confidence_level(d, y)?);
        out.area.push(confidence_area(d, level)?);
        out.error.push(weighted_error(d, y)?);
        let map = s.future_map(k);
        if map.grid() != d.grid() {
            return Err(MetricsError::GridMismatch);
        }
        let o = map.obstacle_mask(ObstacleKind::Occupancy);
        out.occupancy.as_mut().expect("set above").push(occupancy(d, &o)?);
    }
    Ok(Some(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: f64,
    pub ece: f64,
    pub waee: f64,
    pub mean_area: f64,
    pub occupancy: Option<f64>,
    pub reliability: ReliabilityCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub samples: usize,
    /// Mean of the per-horizon calibration errors.
    pub ece: f64,
    /// Time-normalized mean area at the report level.
    pub sharpness: f64,
    pub aswaee: f64,
    pub horizons: Vec<HorizonMetrics>,
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

pub fn aggregate(scores: &[&SampleScores], horizons: &[f64], bins: usize) -> Result<GroupMetrics, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty("scored samples"));
    }
    let n = scores.len();
    let mut per = Vec::with_capacity(horizons.len());
    for (k, &t) in horizons.iter().enumerate() {
        let cs: Vec<f64> = scores.iter().map(|s| s.confidence[k]).collect();
        let reliability = reliability_curve(&cs, bins)?;
        let occ = if scores.iter().all(|s| s.occupancy.is_some()) {
            Some(mean(scores.iter().map(|s| s.occupancy.as_ref().expect("checked")[k]), n))
        } else {
            None
        };
        per.push(HorizonMetrics {
            horizon: t,
            ece: reliability.calibration_error(),
            waee: mean(scores.iter().map(|s| s.error[k]), n),
            mean_area: mean(scores.iter().map(|s| s.area[k]), n),
            occupancy: occ,
            reliability,
        });
    }
    let areas: Vec<f64> = per.iter().map(|h| h.mean_area).collect();
    let waees: Vec<f64> = per.iter().map(|h| h.waee).collect();
    Ok(GroupMetrics {
        samples: n,
        ece: mean(per.iter().map(|h| h.ece), per.len()),
        sharpness: sharpness(&areas, horizons)?,
        aswaee: aswaee(&waees, horizons)?,
        horizons: per,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub evaluated: usize,
    /// Samples skipped because a truth left the grid.
    pub excluded_out_of_grid: usize,
    /// VRU type (or `all`) -> motion type (or `all`) -> metrics.
    pub groups: BTreeMap<String, BTreeMap<String, GroupMetrics>>,
}

impl ModelMetrics {
    pub fn overall(&self) -> &GroupMetrics {
        &self.groups[ALL][ALL]
    }

    pub fn from_scores(
        model: &str,
        scores: &[SampleScores],
        horizons: &[f64],
        bins: usize,
        excluded_out_of_grid: usize,
    ) -> Result<Self, MetricsError> {
        let mut groups: BTreeMap<String, BTreeMap<String, GroupMetrics>> = BTreeMap::new();
        let all: Vec<&SampleScores> = scores.iter().collect();
        let mut add = |vru: String, subset: Vec<&SampleScores>| -> Result<(), MetricsError> {
            let mut inner = BTreeMap::new();
            inner.insert(ALL.to_string(), aggregate(&subset, horizons, bins)?);
            for m in MotionType::ALL {
                let part: Vec<&SampleScores> = subset.iter().copied().filter(|s| s.motion_type == m).collect();
                if !part.is_empty() {
                    inner.insert(m.name().to_string(), aggregate(&part, horizons, bins)?);
                }
            }
            groups.insert(vru, inner);
            Ok(())
        };
        add(ALL.to_string(), all.clone())?;
        for v in [VruType::Pedestrian, VruType::Cyclist] {
            let part: Vec<&SampleScores> = all.iter().copied().filter(|s| s.vru_type == v).collect();
            if !part.is_empty() {
                add(v.to_string(), part)?;
            }
        }
        Ok(Self {
            model: model.to_string(),
            evaluated: scores.len(),
            excluded_out_of_grid,
            groups,
        })
    }
}

/// Forecasts every sample and aggregates the discrete metrics.
pub fn evaluate_forecaster(f: &dyn Forecaster, samples: &[VruSample], opts: &EvalOptions) -> Result<ModelMetrics, MetricsError> {
    for s in samples {
        if s.futures.len() != f.horizons().len() {
            return Err(MetricsError::LengthMismatch {
                left: s.futures.len(),
                right: f.horizons().len(),
            });
        }
    }
    let forecasts = f.forecast_all(samples)?;
    let scored: Vec<Option<SampleScores>> = forecasts
        .par_iter()
        .zip(samples.par_iter())
        .map(|(fc, s)| score_discrete(fc, s, opts.level))
        .collect::<Result<_, _>>()?;
    let excluded = scored.iter().filter(|s| s.is_none()).count();
    let scores: Vec<SampleScores> = scored.into_iter().flatten().collect();
    ModelMetrics::from_scores(&f.name(), &scores, f.horizons(), opts.bins, excluded)
}

/// Scores Gaussian forecasts at the exact ego-frame truth; the weighted
/// error uses seeded Monte Carlo, and occupancy is not defined.
pub fn evaluate_continuous(m: &ContinuousModel, samples: &[VruSample], opts: &EvalOptions) -> Result<ModelMetrics, MetricsError> {
    let t = m.horizons.len();
    let scores: Vec<SampleScores> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<SampleScores, MetricsError> {
            let ego = m.ego(s)?;
            let fc = m.forecast_ego(&ego)?;
            if ego.futures.len() != t {
                return Err(MetricsError::LengthMismatch {
                    left: ego.futures.len(),
                    right: t,
                });
            }
            let mut out = SampleScores {
                vru_type: s.vru_type,
                motion_type: s.motion_type,
                confidence: Vec::with_capacity(t),
                area: Vec::with_capacity(t),
                error: Vec::with_capacity(t),
                occupancy: None,
            };
            for (k, (f, &y)) in fc.forecasts.iter().zip(&ego.futures).enumerate() {
                out.confidence.push(gaussian_confidence_level(f, y)?);
                out.area.push(gaussian_confidence_area(f, opts.level)?);
                let seed = opts.seed.wrapping_add((i * t + k) as u64);
                out.error.push(gaussian_waee(f, y, opts.mc_samples, seed)?);
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    ModelMetrics::from_scores(m.kind.name(), &scores, &m.horizons, opts.bins, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub version: u32,
    /// Hash of the run configuration that produced the numbers.
    pub config_hash: Option<String>,
    pub bins: usize,
    pub level: f64,
    pub bin_rule: String,
    pub truth_rule: String,
    pub samples: usize,
    /// Samples with at least one horizon evaluated against the current map.
    pub reused_current_maps: usize,
}

impl ReportHeader {
    pub fn new(opts: &EvalOptions, samples: &[VruSample], config_hash: Option<String>) -> Self {
        Self {
            version: REPORT_VERSION,
            config_hash,
            bins: opts.bins,
            level: opts.level,
            bin_rule: format!(
                "{} equal-width bins over (0, 1]; observed frequency taken at each bin's upper edge",
                opts.bins
            ),
            truth_rule: "discrete models: truth snapped to its cell center; continuous models: exact truth in the ego frame"
                .into(),
            samples: samples.len(),
            reused_current_maps: samples.iter().filter(|s| s.reuses_current_map()).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub header: ReportHeader,
    pub models: BTreeMap<String, ModelMetrics>,
}

impl MetricsReport {
    pub fn new(header: ReportHeader) -> Self {
        Self {
            header,
            models: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, m: ModelMetrics) {
        self.models.insert(m.model.clone(), m);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
