//! On-disk layout: `manifest.json`, `samples.jsonl` with one record per
//! line, and `maps/*.pgm` rasters referenced by relative path. A horizon
//! whose map reference is `null` reuses the current map.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Manifest};
use crate::features::{FutureState, MotionType, Pose, VruSample, VruType};
use crate::grid::Grid;
use crate::scene::SemanticMap;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const MAPS_DIR: &str = "maps";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FutureRecord {
    position: [f64; 2],
    map: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    location_id: String,
    vru_type: VruType,
    motion_type: MotionType,
    head_xy: Vec<[f64; 2]>,
    pose: Vec<Pose>,
    map_tc: String,
    futures: Vec<FutureRecord>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_map(dir: &Path, rel: &str, map: &SemanticMap) -> Result<(), DataError> {
    let path = dir.join(rel);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    map.write_pgm(&mut w)?;
    w.flush().map_err(io_err(&path))
}

/// Writes `ds` into directory `dir`, creating it when needed. Maps equal to
/// the current map are stored once and referenced from every horizon.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    ds.validate()?;
    let maps = dir.join(MAPS_DIR);
    fs::create_dir_all(&maps).map_err(io_err(&maps))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;

    let samples_path = dir.join(SAMPLES_FILE);
    let mut out = BufWriter::new(File::create(&samples_path).map_err(io_err(&samples_path))?);
    for (i, s) in ds.samples.iter().enumerate() {
        let tc = format!("{MAPS_DIR}/{i:06}_tc.pgm");
        write_map(dir, &tc, &s.map_tc)?;
        let mut futures = Vec::with_capacity(s.futures.len());
        for (k, f) in s.futures.iter().enumerate() {
            let map = match &f.map {
                None => None,
                Some(m) if *m == s.map_tc => Some(tc.clone()),
                Some(m) => {
                    let rel = format!("{MAPS_DIR}/{i:06}_h{k}.pgm");
                    write_map(dir, &rel, m)?;
                    Some(rel)
                }
            };
            futures.push(FutureRecord {
                position: f.position,
                map,
            });
        }
        let record = Record {
            id: s.id.clone(),
            location_id: s.location_id.clone(),
            vru_type: s.vru_type,
            motion_type: s.motion_type,
            head_xy: s.head_xy.clone(),
            pose: s.pose.clone(),
            map_tc: tc,
            futures,
        };
        serde_json::to_writer(&mut out, &record).expect("record serializes");
        out.write_all(b"\n").map_err(io_err(&samples_path))?;
    }
    out.flush().map_err(io_err(&samples_path))
}

/// Resolves a map reference, which must stay inside the dataset directory.
fn map_path(dir: &Path, rel: &str, field: &str) -> Result<PathBuf, DataError> {
    let p = Path::new(rel);
    if p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(DataError::Schema {
            field: field.into(),
            reason: format!("map reference {rel} leaves the dataset directory"),
        });
    }
    Ok(dir.join(p))
}

fn read_map(dir: &Path, rel: &str, grid: Grid, field: &str) -> Result<SemanticMap, DataError> {
    let path = map_path(dir, rel, field)?;
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(DataError::MissingMap(path)),
        Err(e) => return Err(io_err(&path)(e)),
    };
    Ok(SemanticMap::read_pgm(grid, BufReader::new(file))?)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Json {
        path: manifest_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    let grid = manifest.grid()?;

    let samples_path = dir.join(SAMPLES_FILE);
    let reader = BufReader::new(File::open(&samples_path).map_err(io_err(&samples_path))?);
    let mut samples = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(&samples_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line).map_err(|e| DataError::Json {
            path: samples_path.clone(),
            line: n + 1,
            message: e.to_string(),
        })?;
        let map_tc = read_map(dir, &r.map_tc, grid, "map_tc")?;
        let futures = r
            .futures
            .into_iter()
            .map(|f| {
                let map = match f.map {
                    None => None,
                    Some(rel) if rel == r.map_tc => Some(map_tc.clone()),
                    Some(rel) => Some(read_map(dir, &rel, grid, "futures.map")?),
                };
                Ok(FutureState {
                    position: f.position,
                    map,
                })
            })
            .collect::<Result<_, DataError>>()?;
        samples.push(VruSample {
            id: r.id,
            location_id: r.location_id,
            vru_type: r.vru_type,
            motion_type: r.motion_type,
            head_xy: r.head_xy,
            pose: r.pose,
            map_tc,
            futures,
        });
    }
    Dataset::new(manifest, samples)
}
