use std::fmt;
use std::ops::Range;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{fit, ExclusionCounts, TrainConfig, TrainReport, Trainable};
use super::{validate_horizons, ForecastSet, Forecaster, ModelError};
use crate::calibration::apply_temperature;
use crate::features::{pose_features, trajectory_features, FeatureLayout, FeatureVector, Normalizer, VruSample};
use crate::grid::{Grid, GridError};
use crate::nn::layers::{dense_to_grid, grid_to_dense};
use crate::nn::{
    conv2d_same_backward, conv2d_same_forward, dense_backward, dense_forward, relu, relu_backward,
    softmax_cross_entropy, Activation, ConvCache, LayerSpec, Parameters,
};
use crate::scene::{ObstacleKind, NUM_CATEGORIES};
use crate::targets::{gaussian_target, masked_gaussian_target, SmoothingSchedule, TargetError};

/// Samples per forward pass when forecasting many samples.
const FORECAST_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiscreteKind {
    #[serde(rename = "d_t")]
    DT,
    #[serde(rename = "d_tp")]
    DTp,
    #[serde(rename = "d_tpm")]
    DTpm,
}

impl DiscreteKind {
    pub const ALL: [DiscreteKind; 3] = [Self::DT, Self::DTp, Self::DTpm];

    pub fn layout(self) -> FeatureLayout {
        match self {
            Self::DT => FeatureLayout::DT,
            Self::DTp | Self::DTpm => FeatureLayout::DTp,
        }
    }

    pub fn uses_map(self) -> bool {
        self == Self::DTpm
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::DT => "d_t",
            Self::DTp => "d_tp",
            Self::DTpm => "d_tpm",
        }
    }
}

impl fmt::Display for DiscreteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn relu_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteModelConfig {
    pub kind: DiscreteKind,
    pub grid: Grid,
    /// Forecast horizons in seconds.
    pub horizons: Vec<f64>,
    /// Hidden fully connected layers of the trajectory net.
    pub trajectory_layers: usize,
    pub trajectory_width: usize,
    /// 3x3 convolutions of the map net; zero unless `kind` is `d_tpm`.
    pub map_convs: usize,
    pub map_filters: usize,
    /// 3x3 convolutions of the fusion net, before the final 1x1 convolution.
    pub fusion_convs: usize,
    pub fusion_filters: usize,
    pub smoothing: SmoothingSchedule,
    pub masked_targets: bool,
    /// Activation of every layer but the final 1x1 convolution.
    #[serde(default = "relu_activation")]
    pub hidden_activation: Activation,
}

impl DiscreteModelConfig {
    /// The selected architecture of each kind, with one-hot targets unless
    /// five horizons are given.
    pub fn reference(kind: DiscreteKind, grid: Grid, horizons: Vec<f64>) -> Self {
        let (trajectory_layers, trajectory_width, fusion_convs, fusion_filters) = match kind {
            DiscreteKind::DT => (4, 150, 2, 10),
            DiscreteKind::DTp | DiscreteKind::DTpm => (5, 50, 2, 20),
        };
        let (map_convs, map_filters) = if kind.uses_map() { (1, 8) } else { (0, 0) };
        let smoothing = if horizons.len() == 5 {
            SmoothingSchedule::reference_five()
        } else {
            SmoothingSchedule::one_hot(horizons.len())
        };
        Self {
            kind,
            grid,
            horizons,
            trajectory_layers,
            trajectory_width,
            map_convs,
            map_filters,
            fusion_convs,
            fusion_filters,
            smoothing,
            masked_targets: kind.uses_map(),
            hidden_activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        Grid::new(self.grid.side(), self.grid.cell_size()).map_err(|e| ModelError::Config(e.to_string()))?;
        validate_horizons(&self.horizons)?;
        if self.smoothing.len() != self.horizons.len() {
            return err(format!(
                "smoothing schedule has {} entries for {} horizons",
                self.smoothing.len(),
                self.horizons.len()
            ));
        }
        SmoothingSchedule::new(self.smoothing.sigma_cells.clone())?;
        if self.trajectory_layers > 0 && self.trajectory_width == 0 {
            return err("trajectory_width must be positive".into());
        }
        if self.fusion_convs > 0 && self.fusion_filters == 0 {
            return err("fusion_filters must be positive".into());
        }
        if self.kind.uses_map() {
            if self.map_convs == 0 || self.map_filters == 0 {
                return err("d_tpm needs at least one map convolution with filters".into());
            }
            if !self.masked_targets {
                return err("d_tpm trains on obstacle-masked targets".into());
            }
        } else if self.map_convs > 0 {
            return err(format!("{} has no map stream", self.kind));
        }
        Ok(())
    }

    /// Layer specs in execution order: trajectory net, map net, fusion net.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let act = self.hidden_activation;
        let t = self.horizons.len();
        let hw = self.grid.len();
        let mut specs = Vec::new();
        let mut width = self.kind.layout().len();
        for _ in 0..self.trajectory_layers {
            specs.push(LayerSpec::dense(width, self.trajectory_width, act));
            width = self.trajectory_width;
        }
        specs.push(LayerSpec::dense(width, t * hw, act));
        let mut map_channels = NUM_CATEGORIES;
        for _ in 0..self.map_convs {
            specs.push(LayerSpec::conv(3, map_channels, self.map_filters, act));
            map_channels = self.map_filters;
        }
        let mut channels = t + if self.map_convs > 0 { map_channels } else { 0 };
        for _ in 0..self.fusion_convs {
            specs.push(LayerSpec::conv(3, channels, self.fusion_filters, act));
            channels = self.fusion_filters;
        }
        specs.push(LayerSpec::conv(1, channels, t, Activation::Linear));
        specs
    }

    pub fn param_count(&self) -> usize {
        self.layer_specs().iter().map(LayerSpec::param_count).sum()
    }
}

/// Raw (unnormalized) input features of the given kind.
pub fn raw_features(kind: DiscreteKind, sample: &VruSample) -> Result<FeatureVector, ModelError> {
    Ok(match kind.layout() {
        FeatureLayout::DT => trajectory_features(sample)?,
        _ => pose_features(sample)?,
    })
}

/// Normalized features and optional map of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInput {
    pub features: Vec<f64>,
    /// Category ids of the current map, for `d_tpm`.
    pub map_ids: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteExample {
    pub input: DiscreteInput,
    /// Targets, horizon-major, `horizons * cells` values.
    pub targets: Vec<f64>,
}

struct Forward {
    dense_inputs: Vec<Array2<f64>>,
    dense_pre: Vec<Array2<f64>>,
    conv_caches: Vec<ConvCache>,
    conv_pre: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

/// Layer bookkeeping of the two-stream network.
#[derive(Debug, Clone, PartialEq)]
struct Net {
    specs: Vec<LayerSpec>,
    trajectory: Range<usize>,
    map: Range<usize>,
    fusion: Range<usize>,
    side: usize,
    horizons: usize,
}

impl Net {
    fn new(cfg: &DiscreteModelConfig) -> Self {
        let specs = cfg.layer_specs();
        let t_end = cfg.trajectory_layers + 1;
        let m_end = t_end + cfg.map_convs;
        Self {
            trajectory: 0..t_end,
            map: t_end..m_end,
            fusion: m_end..specs.len(),
            specs,
            side: cfg.grid.side(),
            horizons: cfg.horizons.len(),
        }
    }

    fn hw(&self) -> usize {
        self.side * self.side
    }

    fn activate(spec: &LayerSpec, pre: &Array2<f64>) -> Array2<f64> {
        match spec.activation() {
            Activation::Relu => relu(pre),
            Activation::Linear => pre.clone(),
        }
    }

    fn activate_back(spec: &LayerSpec, pre: &Array2<f64>, dy: Array2<f64>) -> Array2<f64> {
        match spec.activation() {
            Activation::Relu => relu_backward(pre, &dy),
            Activation::Linear => dy,
        }
    }

    /// `x` is `(batch, features)`, `maps` is `(8, batch * hw)`.
    fn forward(&self, params: &Parameters, x: ArrayView2<f64>, maps: Option<ArrayView2<f64>>) -> Result<Forward, ModelError> {
        let hw = self.hw();
        let mut fw = Forward {
            dense_inputs: Vec::new(),
            dense_pre: Vec::new(),
            conv_caches: Vec::new(),
            conv_pre: Vec::new(),
            logits: Array2::zeros((0, 0)),
        };
        let mut h = x.to_owned();
        for i in self.trajectory.clone() {
            let spec = &self.specs[i];
            let pre = dense_forward(spec, &params.layers[i], h.view())?;
            let out = Self::activate(spec, &pre);
            fw.dense_inputs.push(h);
            fw.dense_pre.push(pre);
            h = out;
        }
        let mut fused = dense_to_grid(h.view(), self.horizons, hw);
        if !self.map.is_empty() {
            let maps = maps.ok_or_else(|| ModelError::Input("model needs a semantic map".into()))?;
            let mut m = maps.to_owned();
            for i in self.map.clone() {
                let spec = &self.specs[i];
                let (pre, cache) = conv2d_same_forward(spec, &params.layers[i], m.view(), self.side)?;
                m = Self::activate(spec, &pre);
                fw.conv_caches.push(cache);
                fw.conv_pre.push(pre);
            }
            fused = concatenate(Axis(0), &[fused.view(), m.view()]).expect("equal widths");
        }
        for i in self.fusion.clone() {
            let spec = &self.specs[i];
            let (pre, cache) = conv2d_same_forward(spec, &params.layers[i], fused.view(), self.side)?;
            fused = Self::activate(spec, &pre);
            fw.conv_caches.push(cache);
            fw.conv_pre.push(pre);
        }
        fw.logits = fused;
        Ok(fw)
    }

    fn backward(&self, params: &Parameters, fw: &Forward, dlogits: Array2<f64>) -> Result<Parameters, ModelError> {
        let mut grads = params.zeros_like();
        let hw = self.hw();
        let conv_base = self.map.start;
        let mut d = dlogits;
        for i in self.fusion.clone().rev() {
            let spec = &self.specs[i];
            let k = i - conv_base;
            let dpre = Self::activate_back(spec, &fw.conv_pre[k], d);
            let (dx, g) = conv2d_same_backward(spec, &params.layers[i], &fw.conv_caches[k], dpre.view(), self.side)?;
            grads.layers[i] = g;
            d = dx;
        }
        let d_traj = d.slice(s![..self.horizons, ..]).to_owned();
        if !self.map.is_empty() {
            let mut dm = d.slice(s![self.horizons.., ..]).to_owned();
            for i in self.map.clone().rev() {
                let spec = &self.specs[i];
                let k = i - conv_base;
                let dpre = Self::activate_back(spec, &fw.conv_pre[k], dm);
                let (dx, g) = conv2d_same_backward(spec, &params.layers[i], &fw.conv_caches[k], dpre.view(), self.side)?;
                grads.layers[i] = g;
                dm = dx;
            }
        }
        let mut dh = grid_to_dense(d_traj.view(), hw);
        for i in self.trajectory.clone().rev() {
            let spec = &self.specs[i];
            let dpre = Self::activate_back(spec, &fw.dense_pre[i], dh);
            let (dx, g) = dense_backward(&params.layers[i], fw.dense_inputs[i].view(), dpre.view())?;
            grads.layers[i] = g;
            dh = dx;
        }
        Ok(grads)
    }
}

/// Trained (or freshly initialized) discrete forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub config: DiscreteModelConfig,
    pub normalizer: Normalizer,
    pub params: Parameters,
    /// Per-horizon softmax temperatures; `None` means 1 everywhere.
    pub temperature: Option<Vec<f64>>,
    pub seed: u64,
    net: Net,
}

impl DiscreteModel {
    /// Randomly initialized model; the seed drives initialization.
    pub fn new(config: DiscreteModelConfig, normalizer: Normalizer, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Self::checked_net(&config, &normalizer)?;
        let params = Parameters::init(&net.specs, &mut rng);
        Ok(Self {
            config,
            normalizer,
            params,
            temperature: None,
            seed,
            net,
        })
    }

    /// Reassembles a model from stored parts.
    pub fn from_parts(
        config: DiscreteModelConfig,
        normalizer: Normalizer,
        params: Parameters,
        temperature: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let net = Self::checked_net(&config, &normalizer)?;
        if !params.matches(&net.specs) {
            return Err(ModelError::Config("parameters do not match the architecture".into()));
        }
        if let Some(t) = &temperature {
            if t.len() != config.horizons.len() || t.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(ModelError::Config(format!("invalid temperatures {t:?}")));
            }
        }
        Ok(Self {
            config,
            normalizer,
            params,
            temperature,
            seed,
            net,
        })
    }

    fn checked_net(config: &DiscreteModelConfig, normalizer: &Normalizer) -> Result<Net, ModelError> {
        config.validate()?;
        let layout = config.kind.layout();
        if normalizer.layout != layout || normalizer.mean.len() != layout.len() {
            return Err(ModelError::Config(format!(
                "normalizer is for {}, model expects {layout}",
                normalizer.layout
            )));
        }
        Ok(Net::new(config))
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.net.specs
    }

    pub fn grid(&self) -> Grid {
        self.config.grid
    }

    pub fn input(&self, sample: &VruSample) -> Result<DiscreteInput, ModelError> {
        let raw = raw_features(self.config.kind, sample)?;
        let features = self.normalizer.apply(&raw)?.values;
        let map_ids = if self.config.kind.uses_map() {
            if sample.map_tc.grid() != &self.config.grid {
                return Err(ModelError::Input(format!(
                    "sample {} map grid {} differs from model grid {}",
                    sample.id,
                    sample.map_tc.grid(),
                    self.config.grid
                )));
            }
            Some(sample.map_tc.ids())
        } else {
            None
        };
        Ok(DiscreteInput { features, map_ids })
    }

    fn batch_arrays(&self, inputs: &[&DiscreteInput]) -> Result<(Array2<f64>, Option<Array2<f64>>), ModelError> {
        let width = self.config.kind.layout().len();
        let hw = self.config.grid.len();
        let mut x = Array2::zeros((inputs.len(), width));
        for (b, inp) in inputs.iter().enumerate() {
            if inp.features.len() != width {
                return Err(ModelError::Input(format!("{} features, expected {width}", inp.features.len())));
            }
            x.row_mut(b).assign(&ndarray::ArrayView1::from(&inp.features[..]));
        }
        let maps = if self.config.kind.uses_map() {
            let mut m = Array2::zeros((NUM_CATEGORIES, inputs.len() * hw));
            for (b, inp) in inputs.iter().enumerate() {
                let ids = inp
                    .map_ids
                    .as_ref()
                    .filter(|ids| ids.len() == hw)
                    .ok_or_else(|| ModelError::Input("missing or mis-sized map".into()))?;
                for (i, &id) in ids.iter().enumerate() {
                    m[[id as usize, b * hw + i]] = 1.0;
                }
            }
            Some(m)
        } else {
            None
        };
        Ok((x, maps))
    }

    /// Pre-softmax logits `(horizons, batch * cells)`, without temperature.
    pub fn logits_batch(&self, inputs: &[&DiscreteInput]) -> Result<Array2<f64>, ModelError> {
        let (x, maps) = self.batch_arrays(inputs)?;
        Ok(self.net.forward(&self.params, x.view(), maps.as_ref().map(|m| m.view()))?.logits)
    }

    /// Pre-softmax logits `(horizons, cells)` of one sample.
    pub fn logits(&self, sample: &VruSample) -> Result<Array2<f64>, ModelError> {
        let input = self.input(sample)?;
        self.logits_batch(&[&input])
    }

    fn temperatures(&self) -> Vec<f64> {
        self.temperature
            .clone()
            .unwrap_or_else(|| vec![1.0; self.config.horizons.len()])
    }

    fn to_forecast(&self, logits: ArrayView2<f64>, temps: &[f64]) -> Result<ForecastSet, ModelError> {
        let dists = apply_temperature(&self.config.grid, logits, temps)?;
        let set = ForecastSet::new(self.config.horizons.clone(), dists)?;
        debug_assert!(set.dists.iter().all(|d| d.validate().is_ok()));
        Ok(set)
    }

    /// Builds training examples, skipping samples whose truth leaves the
    /// grid or, with masked targets, lies on an obstacle.
    pub fn examples(&self, samples: &[VruSample]) -> Result<(Vec<DiscreteExample>, ExclusionCounts), ModelError> {
        let mut out = Vec::with_capacity(samples.len());
        let mut excluded = ExclusionCounts::default();
        let grid = &self.config.grid;
        'samples: for s in samples {
            if s.futures.len() != self.config.horizons.len() {
                return Err(ModelError::Input(format!(
                    "sample {} has {} horizons, model has {}",
                    s.id,
                    s.futures.len(),
                    self.config.horizons.len()
                )));
            }
            let mut targets = Vec::with_capacity(self.config.horizons.len() * grid.len());
            for k in 0..s.futures.len() {
                let y = match grid.position_to_cell(s.future_offset(k)) {
                    Ok(y) => y,
                    Err(GridError::OutOfGrid { .. }) => {
                        excluded.out_of_grid += 1;
                        continue 'samples;
                    }
                    Err(e) => return Err(ModelError::Input(e.to_string())),
                };
                let sigma = self.config.smoothing.sigma_meters(k, grid);
                let target = if self.config.masked_targets {
                    let mask = s.future_map(k).obstacle_mask(ObstacleKind::Training);
                    match masked_gaussian_target(grid, y, sigma, &mask) {
                        Ok(t) => t,
                        Err(TargetError::TruthOnObstacle(_)) => {
                            excluded.truth_on_obstacle += 1;
                            continue 'samples;
                        }
                        Err(e) => return Err(e.into()),
                    }
                } else {
                    gaussian_target(grid, y, sigma)?
                };
                targets.extend_from_slice(target.probs());
            }
            out.push(DiscreteExample {
                input: self.input(s)?,
                targets,
            });
        }
        Ok((out, excluded))
    }

    fn batch_targets(&self, batch: &[&DiscreteExample]) -> Array2<f64> {
        let hw = self.config.grid.len();
        let t = self.config.horizons.len();
        let mut p = Array2::zeros((t, batch.len() * hw));
        for (b, ex) in batch.iter().enumerate() {
            for k in 0..t {
                p.slice_mut(s![k, b * hw..(b + 1) * hw])
                    .assign(&ndarray::ArrayView1::from(&ex.targets[k * hw..(k + 1) * hw]));
            }
        }
        p
    }

    fn loss_impl(&self, batch: &[&DiscreteExample], with_grad: bool) -> Result<(f64, Option<Parameters>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptySet("batch"));
        }
        let inputs: Vec<&DiscreteInput> = batch.iter().map(|e| &e.input).collect();
        let (x, maps) = self.batch_arrays(&inputs)?;
        let fw = self.net.forward(&self.params, x.view(), maps.as_ref().map(|m| m.view()))?;
        let target = self.batch_targets(batch);
        let (loss, _, dlogits) = softmax_cross_entropy(fw.logits.view(), target.view(), self.config.grid.len())?;
        let grads = if with_grad {
            Some(self.net.backward(&self.params, &fw, dlogits)?)
        } else {
            None
        };
        Ok((loss, grads))
    }
}

impl Trainable for DiscreteModel {
    type Example = DiscreteExample;

    fn parameters(&self) -> &Parameters {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    fn batch_loss(&self, batch: &[&DiscreteExample]) -> Result<f64, ModelError> {
        Ok(self.loss_impl(batch, false)?.0)
    }

    fn batch_loss_and_grad(&self, batch: &[&DiscreteExample]) -> Result<(f64, Parameters), ModelError> {
        let (loss, grads) = self.loss_impl(batch, true)?;
        Ok((loss, grads.expect("requested")))
    }
}

impl Forecaster for DiscreteModel {
    fn name(&self) -> String {
        self.config.kind.to_string()
    }

    fn grid(&self) -> Grid {
        self.config.grid
    }

    fn horizons(&self) -> &[f64] {
        &self.config.horizons
    }

    fn forecast(&self, sample: &VruSample) -> Result<ForecastSet, ModelError> {
        let logits = self.logits(sample)?;
        self.to_forecast(logits.view(), &self.temperatures())
    }

    /// Chunked batch forward passes, parallel across chunks; the output order
    /// and values do not depend on the thread count.
    fn forecast_all(&self, samples: &[VruSample]) -> Result<Vec<ForecastSet>, ModelError> {
        let temps = self.temperatures();
        let hw = self.config.grid.len();
        let chunks: Vec<Result<Vec<ForecastSet>, ModelError>> = samples
            .par_chunks(FORECAST_CHUNK)
            .map(|chunk| {
                let inputs = chunk.iter().map(|s| self.input(s)).collect::<Result<Vec<_>, _>>()?;
                let refs: Vec<&DiscreteInput> = inputs.iter().collect();
                let logits = self.logits_batch(&refs)?;
                (0..chunk.len())
                    .map(|b| self.to_forecast(logits.slice(s![.., b * hw..(b + 1) * hw]), &temps))
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }
}

/// Fits the normalizer on the training samples, initializes from `seed`, and
/// trains with early stopping.
pub fn train_discrete(
    config: DiscreteModelConfig,
    train_cfg: &TrainConfig,
    train: &[VruSample],
    val: &[VruSample],
    seed: u64,
) -> Result<(DiscreteModel, TrainReport), ModelError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySet("training"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptySet("validation"));
    }
    let raw = train
        .iter()
        .map(|s| raw_features(config.kind, s))
        .collect::<Result<Vec<_>, _>>()?;
    let normalizer = Normalizer::fit(&raw)?;
    let mut model = DiscreteModel::new(config, normalizer, seed)?;
    let (train_ex, excluded_train) = model.examples(train)?;
    let (val_ex, excluded_val) = model.examples(val)?;
    let mut report = fit(&mut model, &train_ex, &val_ex, train_cfg, seed)?;
    report.excluded_train = excluded_train;
    report.excluded_val = excluded_val;
    Ok((model, report))
}
