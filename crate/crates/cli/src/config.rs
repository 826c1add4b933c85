//! Run configuration: a TOML file, then `GRIDCAST_*` environment variables,
//! then command-line flags, validated as a whole before any work starts.
//!
//! Environment keys mirror the TOML path with `__` between levels, e.g.
//! `GRIDCAST_TRAIN__MAX_EPOCHS=5` or `GRIDCAST_MODEL__KIND=d_tp`. Values are
//! parsed as TOML literals and fall back to plain strings.

use std::fs;
use std::path::{Path, PathBuf};

use gridcast_core::data::{BehaviorMix, PoseConfig, SceneKind, SplitFractions};
use gridcast_core::metrics::EvalOptions;
use gridcast_core::models::{validate_horizons, ContinuousKind, DiscreteKind, DiscreteModelConfig, TrainConfig};
use gridcast_core::nn::Activation;
use gridcast_core::{Grid, SmoothingSchedule, SynthConfig, VruType};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "GRIDCAST_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 1 gives bit-reproducible output, 0 uses every core.
    pub threads: usize,
    /// Every command writes only below this directory.
    pub out: PathBuf,
    pub grid: GridConfig,
    pub data: DataConfig,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub calibration: CalibrationSection,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            out: PathBuf::from("gridcast-out"),
            grid: GridConfig::default(),
            data: DataConfig::default(),
            synth: SynthSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            calibration: CalibrationSection::default(),
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Odd number of cells per side.
    pub side: usize,
    /// Cell edge in meters.
    pub cell_size: f64,
    /// Forecast horizons in seconds.
    pub horizons: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            side: 33,
            cell_size: 0.35,
            horizons: vec![0.44, 0.96, 1.48],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; defaults to `<out>/dataset`, where `synth` writes.
    pub dataset: Option<PathBuf>,
    pub split: SplitFractions,
    /// Rotated copies per training sample; 1 leaves the training set as is.
    pub augment_rotations: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            split: SplitFractions::default(),
            augment_rotations: 1,
        }
    }
}

/// Generator settings; grid, horizons and seed come from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub scene: SceneKind,
    pub behavior_mix: BehaviorMix,
    pub speed: [f64; 2],
    pub vru_type: VruType,
    pub pose: PoseConfig,
    pub noise_sigma: f64,
    pub samples: usize,
    pub locations: usize,
    pub corridor_width: [f64; 2],
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            scene: d.scene,
            behavior_mix: d.behavior_mix,
            speed: d.speed,
            vru_type: d.vru_type,
            pose: d.pose,
            noise_sigma: d.noise_sigma,
            samples: d.samples,
            locations: d.locations,
            corridor_width: d.corridor_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "d_t")]
    DT,
    #[serde(rename = "d_tp")]
    DTp,
    #[serde(rename = "d_tpm")]
    DTpm,
    #[serde(rename = "c_t")]
    CT,
    #[serde(rename = "c_tp")]
    CTp,
}

/// Either family of model kinds.
pub enum Family {
    Discrete(DiscreteKind),
    Continuous(ContinuousKind),
}

impl ModelKind {
    pub fn family(self) -> Family {
        match self {
            Self::DT => Family::Discrete(DiscreteKind::DT),
            Self::DTp => Family::Discrete(DiscreteKind::DTp),
            Self::DTpm => Family::Discrete(DiscreteKind::DTpm),
            Self::CT => Family::Continuous(ContinuousKind::CT),
            Self::CTp => Family::Continuous(ContinuousKind::CTp),
        }
    }
}

/// Architecture overrides on top of the reference architecture of `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub trajectory_layers: Option<usize>,
    pub trajectory_width: Option<usize>,
    pub map_convs: Option<usize>,
    pub map_filters: Option<usize>,
    pub fusion_convs: Option<usize>,
    pub fusion_filters: Option<usize>,
    /// Smoothing standard deviation per horizon, in cells. Defaults to the
    /// reference schedule for five horizons and one-hot targets otherwise.
    pub smoothing: Option<Vec<f64>>,
    pub hidden_activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::DT,
            trajectory_layers: None,
            trajectory_width: None,
            map_convs: None,
            map_filters: None,
            fusion_convs: None,
            fusion_filters: None,
            smoothing: None,
            hidden_activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Smoothing candidates in cells; empty skips the sweep.
    pub sigma_candidates: Vec<f64>,
    /// Fit per-horizon softmax temperatures after the sweep.
    pub temperature: bool,
    pub bins: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            sigma_candidates: Vec::new(),
            temperature: true,
            bins: EvalOptions::default().bins,
        }
    }
}

/// Command-line values that take precedence over file and environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `env` and `flags`,
    /// and validates the result.
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &Overrides,
    ) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        env.sort();
        for (key, raw) in env {
            apply_env(&mut table, &key, &raw)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::validation(format!("configuration: {}", e.message())))?;
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(t) = flags.threads {
            cfg.threads = t;
        }
        if let Some(o) = &flags.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::validation(format!("configuration: {m}")));
        self.grid()?;
        validate_horizons(&self.grid.horizons).map_err(CliError::from)?;
        self.data.split.validate()?;
        if self.data.augment_rotations == 0 {
            return bad("data.augment_rotations must be at least 1".into());
        }
        self.synth_config().validate()?;
        self.train.validate()?;
        if self.calibration.bins == 0 || self.eval.bins == 0 {
            return bad("bin counts must be positive".into());
        }
        if self.calibration.sigma_candidates.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("calibration.sigma_candidates must be finite and non-negative".into());
        }
        if !(self.eval.level > 0.0 && self.eval.level < 1.0) || self.eval.mc_samples == 0 {
            return bad("eval.level must lie in (0, 1) and eval.mc_samples be positive".into());
        }
        if let Family::Discrete(_) = self.model.kind.family() {
            self.discrete_model(self.grid()?, self.grid.horizons.clone())?.validate()?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Grid::new(self.grid.side, self.grid.cell_size)
            .map_err(|e| CliError::validation(format!("configuration: grid: {e}")))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.data.dataset.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            scene: s.scene,
            behavior_mix: s.behavior_mix,
            speed: s.speed,
            vru_type: s.vru_type,
            pose: s.pose,
            noise_sigma: s.noise_sigma,
            samples: s.samples,
            locations: s.locations,
            grid_side: self.grid.side,
            cell_size: self.grid.cell_size,
            horizons: self.grid.horizons.clone(),
            corridor_width: s.corridor_width,
            seed: self.seed,
        }
    }

    /// Reference architecture of the configured kind with the overrides.
    pub fn discrete_model(&self, grid: Grid, horizons: Vec<f64>) -> Result<DiscreteModelConfig, CliError> {
        let Family::Discrete(kind) = self.model.kind.family() else {
            return Err(CliError::validation("configuration: model.kind is not a grid model"));
        };
        let m = &self.model;
        let n = horizons.len();
        let mut cfg = DiscreteModelConfig::reference(kind, grid, horizons);
        cfg.trajectory_layers = m.trajectory_layers.unwrap_or(cfg.trajectory_layers);
        cfg.trajectory_width = m.trajectory_width.unwrap_or(cfg.trajectory_width);
        cfg.map_convs = m.map_convs.unwrap_or(cfg.map_convs);
        cfg.map_filters = m.map_filters.unwrap_or(cfg.map_filters);
        cfg.fusion_convs = m.fusion_convs.unwrap_or(cfg.fusion_convs);
        cfg.fusion_filters = m.fusion_filters.unwrap_or(cfg.fusion_filters);
        cfg.hidden_activation = m.hidden_activation;
        if let Some(s) = &m.smoothing {
            if s.len() != n {
                return Err(CliError::validation(format!(
                    "configuration: model.smoothing has {} entries for {n} horizons",
                    s.len()
                )));
            }
            cfg.smoothing = SmoothingSchedule::new(s.clone())
                .map_err(|e| CliError::validation(format!("configuration: model.smoothing: {e}")))?;
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory and
    /// thread count, which do not change any number.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.threads = 0;
        let json = serde_json::to_vec(&c).expect("configuration serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn apply_env(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), CliError> {
    let path: Vec<String> = key[ENV_PREFIX.len()..]
        .split("__")
        .map(str::to_ascii_lowercase)
        .collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::validation(format!("environment variable {key} does not name a key")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::validation(format!("environment variable {key}: `{p}` is not a table"))),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, env: &[(&str, &str)], flags: &Overrides) -> Result<RunConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, text).unwrap();
        RunConfig::load(
            Some(&p),
            env.iter().map(|(k, v)| (k.to_string(), v.to_string())),
            flags,
        )
    }

    #[test]
    fn defaults_validate() {
        let c = load("", &[], &Overrides::default()).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = load("[train]\nmax_epoch = 3\n", &[], &Overrides::default()).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.message.contains("max_epoch"), "{e}");
        assert!(load("colour = 1\n", &[], &Overrides::default()).is_err());
        assert!(load("", &[("GRIDCAST_TRAIN__NOPE", "1")], &Overrides::default()).is_err());
    }

    #[test]
    fn precedence_is_file_env_flags() {
        let text = "seed = 1\nthreads = 2\n[train]\nmax_epochs = 7\n";
        let c = load(text, &[("GRIDCAST_SEED", "5"), ("GRIDCAST_TRAIN__MAX_EPOCHS", "9"), ("OTHER", "x")], &Overrides::default()).unwrap();
        assert_eq!((c.seed, c.threads, c.train.max_epochs), (5, 2, 9));
        let flags = Overrides {
            seed: Some(8),
            ..Overrides::default()
        };
        let c = load(text, &[("GRIDCAST_SEED", "5")], &flags).unwrap();
        assert_eq!(c.seed, 8);
        let c = load("", &[("GRIDCAST_MODEL__KIND", "d_tpm"), ("GRIDCAST_SYNTH__SCENE", "open")], &Overrides::default()).unwrap();
        assert_eq!(c.model.kind, ModelKind::DTpm);
        assert_eq!(c.synth.scene, SceneKind::Open);
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(load("[grid]\nside = 4\n", &[], &Overrides::default()).is_err());
        assert!(load("[grid]\nhorizons = [1.0, 0.5]\n", &[], &Overrides::default()).is_err());
        assert!(load("[model]\nsmoothing = [0.5]\n", &[], &Overrides::default()).is_err());
        assert!(load("[synth.behavior_mix]\nconstant_velocity = 0.5\nstart = 0.1\nstop = 0.1\nturn = 0.1\n", &[], &Overrides::default()).is_err());
    }

    #[test]
    fn hash_ignores_output_location_and_threads() {
        let a = load("", &[], &Overrides::default()).unwrap();
        let b = load("threads = 4\nout = \"elsewhere\"\n", &[], &Overrides::default()).unwrap();
        let c = load("seed = 3\n", &[], &Overrides::default()).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
