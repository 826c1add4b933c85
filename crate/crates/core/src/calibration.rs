//! Per-horizon temperature scaling and the spatial-smoothing sweep.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::VruSample;
use crate::grid::{CellIndex, Grid, GridDistribution, GridError};
use crate::metrics::{confidence_level, reliability_curve, MetricsError, ReliabilityCurve};
use crate::models::discrete::{train_discrete, DiscreteInput};
use crate::models::{DiscreteModel, DiscreteModelConfig, ModelError, TrainConfig, TrainReport};
use crate::nn::loss::softmax_chunks;
use crate::nn::NnError;
use crate::targets::SmoothingSchedule;

pub const MIN_TEMPERATURE: f64 = 0.05;
pub const MAX_TEMPERATURE: f64 = 20.0;
pub const GOLDEN_ITERATIONS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub temperatures: Vec<f64>,
}

impl TemperatureSchedule {
    pub fn identity(horizons: usize) -> Self {
        Self {
            temperatures: vec![1.0; horizons],
        }
    }
}

/// Per-horizon softmax of `logits / T` for one sample's `(horizons, cells)`
/// logits.
pub fn apply_temperature(grid: &Grid, logits: ArrayView2<f64>, temps: &[f64]) -> Result<Vec<GridDistribution>, NnError> {
    if logits.nrows() != temps.len() || logits.ncols() != grid.len() {
        return Err(NnError::Shape(format!(
            "logits {:?} for {} temperatures on {} cells",
            logits.dim(),
            temps.len(),
            grid.len()
        )));
    }
    if temps.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(NnError::NonFinite("temperature"));
    }
    let mut scaled = logits.to_owned();
    for (mut row, &t) in scaled.rows_mut().into_iter().zip(temps) {
        row.mapv_inplace(|v| v / t);
    }
    let probs = softmax_chunks(scaled.view(), grid.len())?;
    probs
        .rows()
        .into_iter()
        .map(|r| GridDistribution::new(*grid, r.to_vec()).map_err(|e| NnError::Shape(e.to_string())))
        .collect()
}

/// Outcome of a calibration run, serialized as the calibration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub bins: usize,
    pub sigma_sweep: Option<SigmaSweep>,
    pub temperature: Option<TemperatureFit>,
}

impl CalibrationReport {
    pub const VERSION: u32 = 1;

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no candidates to choose from")]
    NoCandidates,
    #[error("no validation samples with in-grid truth")]
    EmptyValidation,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Reliability curve of one horizon given its logits and truth cells.
fn horizon_curve(grid: &Grid, logits: &[Vec<f64>], truths: &[CellIndex], t: f64, bins: usize) -> Result<ReliabilityCurve, CalibrationError> {
    let mut cs = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(truths) {
        let row = ArrayView2::from_shape((1, z.len()), z).expect("one row");
        let d = apply_temperature(grid, row, &[t])?.pop().expect("one horizon");
        cs.push(confidence_level(&d, y)?);
    }
    Ok(reliability_curve(&cs, bins)?)
}

fn horizon_ece(grid: &Grid, logits: &[Vec<f64>], truths: &[CellIndex], t: f64, bins: usize) -> Result<f64, CalibrationError> {
    Ok(horizon_curve(grid, logits, truths, t, bins)?.calibration_error())
}

/// Search objective: the ECE, except that a curve with every level in the
/// top bin scores infinity. Such a curve has zero ECE whatever the truths,
/// which a near one-hot forecast reaches at small temperatures.
fn search_ece(grid: &Grid, logits: &[Vec<f64>], truths: &[CellIndex], t: f64, bins: usize) -> Result<f64, CalibrationError> {
    let curve = horizon_curve(grid, logits, truths, t, bins)?;
    if bins > 1 && curve.counts[..bins - 1].iter().all(|&c| c == 0) {
        return Ok(f64::INFINITY);
    }
    Ok(curve.calibration_error())
}

/// Golden-section search of `f` over `[lo, hi]`.
fn golden_section(mut lo: f64, mut hi: f64, iterations: usize, mut f: impl FnMut(f64) -> Result<f64, CalibrationError>) -> Result<(f64, f64), CalibrationError> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    for _ in 0..iterations {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b)?;
        }
    }
    Ok(if fa <= fb { (a, fa) } else { (b, fb) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub schedule: TemperatureSchedule,
    /// Validation ECE per horizon at T = 1.
    pub ece_before: Vec<f64>,
    /// Validation ECE per horizon at the fitted temperature.
    pub ece_after: Vec<f64>,
}

/// Per-horizon temperatures from pre-softmax logits: golden-section search
/// over `log T` in `[0.05, 20]`, falling back to `T = 1` when that is at
/// least as good. Temperatures that push every confidence level into the
/// top bin are excluded from the search.
///
/// `logits[i]` is sample `i`'s `(horizons, cells)` matrix and `truths[i]`
/// its truth cell per horizon.
pub fn fit_temperature_logits(
    grid: &Grid,
    logits: &[Array2<f64>],
    truths: &[Vec<CellIndex>],
    bins: usize,
) -> Result<TemperatureFit, CalibrationError> {
    if logits.is_empty() || logits.len() != truths.len() {
        return Err(CalibrationError::EmptyValidation);
    }
    let horizons = logits[0].nrows();
    let mut fit = TemperatureFit {
        schedule: TemperatureSchedule::identity(horizons),
        ece_before: Vec::new(),
        ece_after: Vec::new(),
    };
    for k in 0..horizons {
        let z: Vec<Vec<f64>> = logits.iter().map(|l| l.row(k).to_vec()).collect();
        let y: Vec<CellIndex> = truths.iter().map(|t| t[k]).collect();
        let base = horizon_ece(grid, &z, &y, 1.0, bins)?;
        let (log_t, best) = golden_section(MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln(), GOLDEN_ITERATIONS, |lt| {
            search_ece(grid, &z, &y, lt.exp(), bins)
        })?;
        fit.ece_before.push(base);
        if best < base {
            fit.schedule.temperatures[k] = log_t.exp();
            fit.ece_after.push(best);
        } else {
            fit.ece_after.push(base);
        }
    }
    Ok(fit)
}

/// Raw logits and truth cells of the validation samples whose truths stay
/// on the grid.
pub fn validation_logits(model: &DiscreteModel, validation: &[VruSample]) -> Result<(Vec<Array2<f64>>, Vec<Vec<CellIndex>>), CalibrationError> {
    let grid = model.grid();
    let mut logits = Vec::new();
    let mut truths = Vec::new();
    'samples: for s in validation {
        let mut ys = Vec::with_capacity(s.futures.len());
        for k in 0..s.futures.len() {
            match grid.position_to_cell(s.future_offset(k)) {
                Ok(y) => ys.push(y),
                Err(GridError::OutOfGrid { .. }) => continue 'samples,
                Err(e) => return Err(MetricsError::from(e).into()),
            }
        }
        let input: DiscreteInput = model.input(s)?;
        logits.push(model.logits_batch(&[&input])?);
        truths.push(ys);
    }
    if logits.is_empty() {
        return Err(CalibrationError::EmptyValidation);
    }
    Ok((logits, truths))
}

/// Fits per-horizon temperatures of `model` on the validation samples.
pub fn fit_temperature(model: &DiscreteModel, validation: &[VruSample], bins: usize) -> Result<TemperatureFit, CalibrationError> {
    let (logits, truths) = validation_logits(model, validation)?;
    fit_temperature_logits(&model.grid(), &logits, &truths, bins)
}

/// Per-horizon validation ECE of a model with its current temperatures.
pub fn validation_ece(model: &DiscreteModel, validation: &[VruSample], bins: usize) -> Result<Vec<f64>, CalibrationError> {
    let (logits, truths) = validation_logits(model, validation)?;
    let temps = model.temperature.clone().unwrap_or_else(|| vec![1.0; model.config.horizons.len()]);
    let grid = model.grid();
    (0..temps.len())
        .map(|k| {
            let z: Vec<Vec<f64>> = logits.iter().map(|l| l.row(k).to_vec()).collect();
            let y: Vec<CellIndex> = truths.iter().map(|t| t[k]).collect();
            horizon_ece(&grid, &z, &y, temps[k], bins)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaCandidateResult {
    /// Smoothing standard deviation in cell units, shared by all horizons.
    pub sigma_cells: f64,
    pub validation_ece: Vec<f64>,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweep {
    pub candidates: Vec<SigmaCandidateResult>,
    /// Per-horizon argmin of validation ECE over the candidates.
    pub selected: SmoothingSchedule,
    pub note: String,
}

/// Trains one model per scalar candidate (applied to every horizon) and
/// picks, per horizon, the candidate with the lowest validation ECE; ties go
/// to the earlier candidate.
pub fn sweep_sigma(
    base: &DiscreteModelConfig,
    train_cfg: &TrainConfig,
    candidates: &[f64],
    train: &[VruSample],
    validation: &[VruSample],
    seed: u64,
    bins: usize,
) -> Result<SigmaSweep, CalibrationError> {
    if candidates.is_empty() {
        return Err(CalibrationError::NoCandidates);
    }
    let horizons = base.horizons.len();
    let results = candidates
        .par_iter()
        .map(|&sigma| {
            let mut cfg = base.clone();
            cfg.smoothing = SmoothingSchedule::uniform(sigma, horizons).map_err(ModelError::from)?;
            let (model, report) = train_discrete(cfg, train_cfg, train, validation, seed)?;
            Ok(SigmaCandidateResult {
                sigma_cells: sigma,
                validation_ece: validation_ece(&model, validation, bins)?,
                report,
            })
        })
        .collect::<Result<Vec<_>, CalibrationError>>()?;
    let selected = (0..horizons)
        .map(|k| {
            let mut best = &results[0];
            for r in &results[1..] {
                if r.validation_ece[k] < best.validation_ece[k] {
                    best = r;
                }
            }
            best.sigma_cells
        })
        .collect();
    Ok(SigmaSweep {
        candidates: results,
        selected: SmoothingSchedule { sigma_cells: selected },
        note: "one training run per scalar candidate shared by all horizons; per-horizon selection from those runs".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        Grid::new(33, 0.35).unwrap()
    }

    /// Logits of an isotropic Gaussian bump of width `w` (cells) at `c`.
    fn bump(c: CellIndex, w: f64) -> Vec<f64> {
        let g = grid();
        (0..g.len())
            .map(|i| {
                let p = g.unflat(i);
                let d2 = (p.row as f64 - c.row as f64).powi(2) + (p.col as f64 - c.col as f64).powi(2);
                -d2 / (2.0 * w * w)
            })
            .collect()
    }

    #[test]
    fn identity_and_limits() {
        let g = grid();
        let z = Array2::from_shape_vec((1, g.len()), bump(g.center(), 1.0)).unwrap();
        let a = apply_temperature(&g, z.view(), &[1.0]).unwrap();
        let b = crate::nn::softmax_grid(&g, z.view()).unwrap();
        assert_eq!(a, b);
        let hot = apply_temperature(&g, z.view(), &[1e6]).unwrap();
        for p in hot[0].probs() {
            assert!((p - 1.0 / 1089.0).abs() < 1e-6);
        }
        assert!(apply_temperature(&g, z.view(), &[0.0]).is_err());
    }

    #[test]
    fn temperature_preserves_argmax() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let z = Array2::from_shape_fn((1, g.len()), |_| rng.random_range(-5.0..5.0));
            let base = apply_temperature(&g, z.view(), &[1.0]).unwrap()[0].argmax();
            for t in [0.05, 0.3, 2.0, 19.0] {
                assert_eq!(apply_temperature(&g, z.view(), &[t]).unwrap()[0].argmax(), base);
            }
        }
    }

    /// Truth drawn from a width-4 bump; forecasts are the same bump with
    /// logits doubled, so `T = 2` restores calibration. The sharpening is
    /// kept moderate: this ECE peaks near a factor 4 and decays again for
    /// extreme overconfidence, where every level sits in the top bin.
    fn overconfident_set(n: usize) -> (Vec<Array2<f64>>, Vec<Vec<CellIndex>>) {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = GridDistribution::from_weights(g, bump(g.center(), 4.0).iter().map(|v| v.exp()).collect()).unwrap();
        let mut logits = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut idx = g.len() - 1;
            for (i, p) in truth.probs().iter().enumerate() {
                acc += p;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            let z: Vec<f64> = bump(g.center(), 4.0).iter().map(|v| 2.0 * v).collect();
            logits.push(Array2::from_shape_vec((1, g.len()), z).unwrap());
            truths.push(vec![g.unflat(idx)]);
        }
        (logits, truths)
    }

    #[test]
    fn overconfident_forecasts_get_heated() {
        let (logits, truths) = overconfident_set(3000);
        let fit = fit_temperature_logits(&grid(), &logits, &truths, 20).unwrap();
        assert!(fit.schedule.temperatures[0] > 1.0, "{fit:?}");
        assert!(fit.ece_after[0] < fit.ece_before[0]);
        assert!((fit.schedule.temperatures[0] - 2.0).abs() < 0.3, "{fit:?}");
    }

    #[test]
    fn fit_never_worse_than_identity() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits: Vec<Array2<f64>> = (0..200)
            .map(|_| Array2::from_shape_fn((2, g.len()), |_| rng.random_range(-2.0..2.0)))
            .collect();
        let truths: Vec<Vec<CellIndex>> = (0..200)
            .map(|_| vec![g.unflat(rng.random_range(0..1089)), g.unflat(rng.random_range(0..1089))])
            .collect();
        let fit = fit_temperature_logits(&g, &logits, &truths, 20).unwrap();
        for k in 0..2 {
            assert!(fit.ece_after[k] <= fit.ece_before[k]);
        }
    }

    #[test]
    fn sweep_selects_per_horizon_argmin() {
        use crate::features::test_support::cv_sample;
        use crate::models::DiscreteKind;
        use crate::scene::{SemanticCategory, SemanticMap};

        let g = Grid::new(9, 0.35).unwrap();
        let data: Vec<VruSample> = (0..24)
            .map(|i| {
                let a = i as f64 * 0.9;
                let mut s = cv_sample([0.5 * a.cos(), 0.5 * a.sin()], &[0.2, 0.4]);
                s.id = format!("s{i}");
                s.map_tc = SemanticMap::filled(g, SemanticCategory::Sidewalk);
                s
            })
            .collect();
        let mut cfg = DiscreteModelConfig::reference(DiscreteKind::DT, g, vec![0.2, 0.4]);
        cfg.trajectory_layers = 1;
        cfg.trajectory_width = 8;
        cfg.fusion_convs = 1;
        cfg.fusion_filters = 2;
        let tc = TrainConfig {
            max_epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let one = sweep_sigma(&cfg, &tc, &[0.5], &data[..16], &data[16..], 3, 10).unwrap();
        assert_eq!(one.selected.sigma_cells, vec![0.5, 0.5]);

        let sweep = sweep_sigma(&cfg, &tc, &[0.1, 0.5, 2.0], &data[..16], &data[16..], 3, 10).unwrap();
        for k in 0..2 {
            let best = sweep
                .candidates
                .iter()
                .map(|c| c.validation_ece[k])
                .fold(f64::INFINITY, f64::min);
            let chosen = sweep
                .candidates
                .iter()
                .find(|c| c.sigma_cells == sweep.selected.sigma_cells[k])
                .unwrap();
            assert_eq!(chosen.validation_ece[k], best);
        }
        let again = sweep_sigma(&cfg, &tc, &[0.1, 0.5, 2.0], &data[..16], &data[16..], 3, 10).unwrap();
        assert_eq!(sweep, again);
        assert!(sweep_sigma(&cfg, &tc, &[], &data[..16], &data[16..], 3, 10).is_err());
    }

    #[test]
    fn golden_section_finds_minimum() {
        let (x, fx) = golden_section(-3.0, 5.0, 60, |x| Ok((x - 1.3).powi(2))).unwrap();
        assert!((x - 1.3).abs() < 1e-6 && fx < 1e-12);
    }
}
