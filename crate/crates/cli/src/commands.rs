use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gridcast_core::calibration::{fit_temperature, sweep_sigma, CalibrationReport};
use gridcast_core::data::{augment_rotations, load_dataset, save_dataset, split_by_location, Dataset};
use gridcast_core::features::rotate2;
use gridcast_core::metrics::{evaluate_continuous, evaluate_forecaster, MetricsReport, ReportHeader};
use gridcast_core::models::checkpoint::{read_model, write_model, StoredModel};
use gridcast_core::models::{
    train_continuous, train_discrete, ContinuousModel, ForecastSet, Forecaster, PersistenceBaseline, TrainReport,
};
use gridcast_core::{synthesize, Grid, GridDistribution, VruSample};
use serde::Serialize;
use serde_json::json;

use crate::config::{Family, RunConfig};
use crate::error::{describe_grid, CliError};

pub const DATASET_DIR: &str = "dataset";
pub const MODEL_FILE: &str = "model.ckpt";
pub const CALIBRATED_FILE: &str = "calibrated.ckpt";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const METRICS_FILE: &str = "metrics.json";
/// Decades below the maximum spanned by log-scaled heatmaps.
pub const LOG_DECADES: f64 = 6.0;

/// What a command produced, printed as JSON on stdout.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub config_hash: String,
    pub outputs: Vec<PathBuf>,
    pub details: serde_json::Value,
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::runtime(format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    f(&mut w).and_then(|_| w.flush()).map_err(err)
}

fn json_text(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn synth(cfg: &RunConfig) -> Result<Summary, CliError> {
    let ds = synthesize(&cfg.synth_config())?;
    let dir = cfg.out.join(DATASET_DIR);
    save_dataset(&ds, &dir)?;
    Ok(Summary {
        command: "synth",
        config_hash: cfg.hash(),
        outputs: vec![dir],
        details: json!({ "samples": ds.len(), "locations": ds.location_ids().len() }),
    })
}

struct Data {
    dataset: Dataset,
    grid: Grid,
    train: Vec<VruSample>,
    validation: Vec<VruSample>,
    test: Vec<VruSample>,
}

fn load_data(cfg: &RunConfig) -> Result<Data, CliError> {
    let dataset = load_dataset(&cfg.dataset_dir())?;
    let grid = dataset.manifest.grid()?;
    let split = split_by_location(&dataset, cfg.data.split, cfg.seed)?;
    let train = if cfg.data.augment_rotations > 1 {
        augment_rotations(&split.train, cfg.data.augment_rotations, cfg.seed)?.samples
    } else {
        split.train.samples
    };
    Ok(Data {
        dataset,
        grid,
        train,
        validation: split.validation.samples,
        test: split.test.samples,
    })
}

/// Training follows the dataset conventions, which must match the
/// configured ones.
fn check_config_against(cfg: &RunConfig, data: &Data) -> Result<(), CliError> {
    let configured = cfg.grid()?;
    if configured != data.grid {
        return Err(CliError::grid_mismatch("dataset", &data.grid, "configured", &configured));
    }
    if data.dataset.manifest.horizons != cfg.grid.horizons {
        return Err(CliError::validation(format!(
            "schema violation: dataset horizons {:?} differ from configured horizons {:?}",
            data.dataset.manifest.horizons, cfg.grid.horizons
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    config_hash: &'a str,
    model: &'a str,
    report: &'a TrainReport,
}

pub fn train(cfg: &RunConfig) -> Result<Summary, CliError> {
    let data = load_data(cfg)?;
    check_config_against(cfg, &data)?;
    let horizons = data.dataset.manifest.horizons.clone();
    let (model, report) = match cfg.model.kind.family() {
        Family::Discrete(_) => {
            let mc = cfg.discrete_model(data.grid, horizons)?;
            let (m, r) = train_discrete(mc, &cfg.train, &data.train, &data.validation, cfg.seed)?;
            (StoredModel::Discrete(m), r)
        }
        Family::Continuous(kind) => {
            let (m, r) = train_continuous(kind, horizons, &cfg.train, &data.train, &data.validation, cfg.seed)?;
            (StoredModel::Continuous(m), r)
        }
    };
    let hash = cfg.hash();
    let ckpt = cfg.out.join(MODEL_FILE);
    save_model(&ckpt, &model)?;
    let report_path = cfg.out.join(TRAIN_REPORT_FILE);
    let name = model_name(&model);
    write_bytes(
        &report_path,
        &json_text(&TrainOutput {
            config_hash: &hash,
            model: &name,
            report: &report,
        }),
    )?;
    Ok(Summary {
        command: "train",
        config_hash: hash,
        outputs: vec![ckpt, report_path],
        details: json!({
            "model": name,
            "best_epoch": report.best_epoch,
            "best_val_loss": report.best_val_loss,
            "stopping_epoch": report.stopping_epoch,
        }),
    })
}

fn model_name(m: &StoredModel) -> String {
    match m {
        StoredModel::Discrete(d) => d.name(),
        StoredModel::Continuous(c) => c.kind.name().to_string(),
    }
}

fn save_model(path: &Path, m: &StoredModel) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    write_model(&mut bytes, m)?;
    write_bytes(path, &bytes)
}

fn load_model(path: &Path) -> Result<StoredModel, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_model(std::io::BufReader::new(file))
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn model_path(cfg: &RunConfig, path: Option<&Path>) -> PathBuf {
    path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(MODEL_FILE))
}

/// A discrete model must share the dataset grid; every model must share its
/// horizons.
fn check_model_against(model: &StoredModel, data: &Data) -> Result<(), CliError> {
    let horizons = match model {
        StoredModel::Discrete(d) => {
            if d.grid() != data.grid {
                return Err(CliError::grid_mismatch("model", &d.grid(), "dataset", &data.grid));
            }
            &d.config.horizons
        }
        StoredModel::Continuous(c) => &c.horizons,
    };
    if *horizons != data.dataset.manifest.horizons {
        return Err(CliError::validation(format!(
            "schema violation: model horizons {horizons:?} differ from dataset horizons {:?}",
            data.dataset.manifest.horizons
        )));
    }
    Ok(())
}

pub fn calibrate(cfg: &RunConfig, model: Option<&Path>) -> Result<Summary, CliError> {
    let data = load_data(cfg)?;
    let stored = load_model(&model_path(cfg, model))?;
    check_model_against(&stored, &data)?;
    let StoredModel::Discrete(mut model) = stored else {
        return Err(CliError::validation("calibration applies to grid models only"));
    };
    let bins = cfg.calibration.bins;
    let sigma_sweep = if cfg.calibration.sigma_candidates.is_empty() {
        None
    } else {
        let sweep = sweep_sigma(
            &model.config,
            &cfg.train,
            &cfg.calibration.sigma_candidates,
            &data.train,
            &data.validation,
            cfg.seed,
            bins,
        )?;
        let mut mc = model.config.clone();
        mc.smoothing = sweep.selected.clone();
        model = train_discrete(mc, &cfg.train, &data.train, &data.validation, cfg.seed)?.0;
        Some(sweep)
    };
    let temperature = if cfg.calibration.temperature {
        let fit = fit_temperature(&model, &data.validation, bins)?;
        model.temperature = Some(fit.schedule.temperatures.clone());
        Some(fit)
    } else {
        None
    };
    let hash = cfg.hash();
    let report = CalibrationReport {
        version: CalibrationReport::VERSION,
        config_hash: hash.clone(),
        seed: cfg.seed,
        bins,
        sigma_sweep,
        temperature,
    };
    let ckpt = cfg.out.join(CALIBRATED_FILE);
    save_model(&ckpt, &StoredModel::Discrete(model))?;
    let report_path = cfg.out.join(CALIBRATION_FILE);
    write_bytes(&report_path, format!("{}\n", report.to_json()).as_bytes())?;
    Ok(Summary {
        command: "calibrate",
        config_hash: hash,
        outputs: vec![ckpt, report_path],
        details: json!({
            "selected_sigma_cells": report.sigma_sweep.as_ref().map(|s| s.selected.sigma_cells.clone()),
            "temperatures": report.temperature.as_ref().map(|t| t.schedule.temperatures.clone()),
        }),
    })
}

pub fn eval(cfg: &RunConfig, model: Option<&Path>) -> Result<Summary, CliError> {
    let data = load_data(cfg)?;
    let stored = load_model(&model_path(cfg, model))?;
    check_model_against(&stored, &data)?;
    let hash = cfg.hash();
    let opts = &cfg.eval;
    let mut report = MetricsReport::new(ReportHeader::new(opts, &data.test, Some(hash.clone())));
    let baseline = PersistenceBaseline {
        grid: data.grid,
        horizons: data.dataset.manifest.horizons.clone(),
    };
    report.insert(evaluate_forecaster(&baseline, &data.test, opts)?);
    report.insert(match &stored {
        StoredModel::Discrete(d) => evaluate_forecaster(d, &data.test, opts)?,
        StoredModel::Continuous(c) => evaluate_continuous(c, &data.test, opts)?,
    });

    let metrics_path = cfg.out.join(METRICS_FILE);
    write_bytes(&metrics_path, format!("{}\n", report.to_json()).as_bytes())?;
    let mut outputs = vec![metrics_path];
    for (name, m) in &report.models {
        for (k, h) in m.overall().horizons.iter().enumerate() {
            let path = cfg.out.join("reliability").join(format!("{name}_h{k}.csv"));
            write_with(&path, |w| h.reliability.write_csv(w))?;
            outputs.push(path);
        }
    }
    let details: serde_json::Map<String, serde_json::Value> = report
        .models
        .iter()
        .map(|(name, m)| {
            let o = m.overall();
            (name.clone(), json!({ "ece": o.ece, "sharpness": o.sharpness, "aswaee": o.aswaee }))
        })
        .collect();
    Ok(Summary {
        command: "eval",
        config_hash: hash,
        outputs,
        details: serde_json::Value::Object(details),
    })
}

/// Density of each horizon's Gaussian at the cell centers, normalized over
/// the grid.
pub fn rasterize_continuous(m: &ContinuousModel, s: &VruSample, grid: Grid) -> Result<ForecastSet, CliError> {
    let ego = m.ego(s)?;
    let fc = m.forecast_ego(&ego)?;
    let centers = grid.centers();
    let mut dists = Vec::with_capacity(fc.forecasts.len());
    for f in &fc.forecasts {
        let w: Vec<f64> = centers
            .iter()
            .map(|&c| (-0.5 * f.mahalanobis2(rotate2(c, ego.rotation))).exp())
            .collect();
        let d = match GridDistribution::from_weights(grid, w) {
            Some(d) => d,
            // all mass underflows far from the grid: fall back to the cell nearest the mean
            None => {
                let mean = ego.to_world(f.mean);
                let cell = grid
                    .nearest_cell(mean)
                    .unwrap_or_else(|| grid.center());
                GridDistribution::one_hot(grid, cell).expect("cell in bounds")
            }
        };
        dists.push(d);
    }
    Ok(ForecastSet::new(fc.horizons, dists)?)
}

/// File-name-safe form of a sample id.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

pub fn forecast(cfg: &RunConfig, sample: &str, model: Option<&Path>, baseline: bool) -> Result<Summary, CliError> {
    let dataset = load_dataset(&cfg.dataset_dir())?;
    let grid = dataset.manifest.grid()?;
    let s = dataset
        .find(sample)
        .ok_or_else(|| CliError::validation(format!("sample `{sample}` is not in the dataset")))?;
    let (name, set) = if baseline {
        let b = PersistenceBaseline {
            grid,
            horizons: dataset.manifest.horizons.clone(),
        };
        (b.name(), b.forecast(s)?)
    } else {
        let stored = load_model(&model_path(cfg, model))?;
        match &stored {
            StoredModel::Discrete(d) => {
                if d.grid() != grid {
                    return Err(CliError::grid_mismatch("model", &d.grid(), "dataset", &grid));
                }
                (d.name(), d.forecast(s)?)
            }
            StoredModel::Continuous(c) => (c.kind.name().to_string(), rasterize_continuous(c, s, grid)?),
        }
    };

    let dir = cfg.out.join("forecast").join(sanitize(sample));
    let mut outputs = Vec::new();
    for (k, d) in set.dists.iter().enumerate() {
        let pgm = dir.join(format!("h{k}.pgm"));
        write_with(&pgm, |w| d.write_pgm(w))?;
        let log = dir.join(format!("h{k}_log.pgm"));
        write_with(&log, |w| d.write_log_pgm(w, LOG_DECADES))?;
        let csv = dir.join(format!("h{k}.csv"));
        write_with(&csv, |w| d.write_csv(w))?;
        outputs.extend([pgm, log, csv]);
    }
    let argmax: Vec<[usize; 2]> = set
        .dists
        .iter()
        .map(|d| {
            let c = d.argmax();
            [c.row, c.col]
        })
        .collect();
    Ok(Summary {
        command: "forecast",
        config_hash: cfg.hash(),
        outputs,
        details: json!({
            "sample": sample,
            "model": name,
            "grid": describe_grid(&grid),
            "horizons": set.horizons,
            "argmax_cells": argmax,
            "log_decades": LOG_DECADES,
        }),
    })
}
