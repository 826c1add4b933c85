use std::f64::consts::PI;
use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{fit, ExclusionCounts, TrainConfig, TrainReport, Trainable};
use super::{validate_horizons, ModelError};
use crate::features::{ego_transform, EgoSample, FeatureLayout, Normalizer, VruSample};
use crate::nn::{dense_backward, dense_forward, relu, relu_backward, Activation, LayerSpec, Parameters};

/// Lower bound added to every predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Bound on the magnitude of the predicted correlation.
pub const RHO_LIMIT: f64 = 0.999;
/// Raw outputs per horizon: mean x, mean y, two scale logits, correlation logit.
pub const PARAMS_PER_HORIZON: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContinuousKind {
    #[serde(rename = "c_t")]
    CT,
    #[serde(rename = "c_tp")]
    CTp,
}

impl ContinuousKind {
    pub fn layout(self) -> FeatureLayout {
        match self {
            Self::CT => FeatureLayout::CT,
            Self::CTp => FeatureLayout::CTp,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::CT => "c_t",
            Self::CTp => "c_tp",
        }
    }
}

impl fmt::Display for ContinuousKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bivariate normal forecast for one horizon, in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianForecast {
    pub mean: [f64; 2],
    pub sigma: [f64; 2],
    pub rho: f64,
}

impl GaussianForecast {
    pub fn is_valid(&self) -> bool {
        self.mean.iter().all(|m| m.is_finite())
            && self.sigma.iter().all(|s| s.is_finite() && *s > 0.0)
            && self.rho.is_finite()
            && self.rho.abs() < 1.0
    }

    /// Squared Mahalanobis distance of `y` from the mean.
    pub fn mahalanobis2(&self, y: [f64; 2]) -> f64 {
        let u = (y[0] - self.mean[0]) / self.sigma[0];
        let v = (y[1] - self.mean[1]) / self.sigma[1];
        (u * u + v * v - 2.0 * self.rho * u * v) / (1.0 - self.rho * self.rho)
    }

    /// Maps raw network outputs `(a, b, c, d, r)` to valid parameters.
    pub fn from_raw(raw: [f64; 5]) -> Self {
        Self {
            mean: [raw[0], raw[1]],
            sigma: [softplus(raw[2]) + SIGMA_FLOOR, softplus(raw[3]) + SIGMA_FLOOR],
            rho: RHO_LIMIT * raw[4].tanh(),
        }
    }
}

/// Per-horizon Gaussian forecasts of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianForecastSet {
    pub horizons: Vec<f64>,
    pub forecasts: Vec<GaussianForecast>,
}

impl GaussianForecastSet {
    pub fn new(horizons: Vec<f64>, forecasts: Vec<GaussianForecast>) -> Result<Self, ModelError> {
        if horizons.len() != forecasts.len() {
            return Err(ModelError::Input("horizon/forecast count mismatch".into()));
        }
        if let Some(bad) = forecasts.iter().find(|f| !f.is_valid()) {
            return Err(ModelError::Input(format!("invalid Gaussian parameters {bad:?}")));
        }
        Ok(Self { horizons, forecasts })
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Negative log density of `y` under one horizon's forecast.
fn nll_one(f: &GaussianForecast, y: [f64; 2]) -> f64 {
    let z = 1.0 - f.rho * f.rho;
    (2.0 * PI).ln() + f.sigma[0].ln() + f.sigma[1].ln() + 0.5 * z.ln() + 0.5 * f.mahalanobis2(y)
}

/// Mean over horizons of the bivariate normal negative log-likelihood.
pub fn bivariate_nll(fc: &GaussianForecastSet, truth: &[[f64; 2]]) -> Result<f64, ModelError> {
    if truth.len() != fc.forecasts.len() || truth.is_empty() {
        return Err(ModelError::Input("truth count differs from horizons".into()));
    }
    let total: f64 = fc.forecasts.iter().zip(truth).map(|(f, &y)| nll_one(f, y)).sum();
    Ok(total / truth.len() as f64)
}

/// Negative log-likelihood of one horizon and its gradient with respect to
/// the raw outputs `(a, b, c, d, r)`.
fn nll_raw_grad(raw: [f64; 5], y: [f64; 2]) -> (f64, [f64; 5]) {
    let f = GaussianForecast::from_raw(raw);
    let [sx, sy] = f.sigma;
    let rho = f.rho;
    let z = 1.0 - rho * rho;
    let u = (y[0] - f.mean[0]) / sx;
    let v = (y[1] - f.mean[1]) / sy;
    let q = u * u + v * v - 2.0 * rho * u * v;
    let loss = (2.0 * PI).ln() + sx.ln() + sy.ln() + 0.5 * z.ln() + 0.5 * q / z;
    let du = (u - rho * v) / z;
    let dv = (v - rho * u) / z;
    let d_sx = (1.0 - u * du) / sx;
    let d_sy = (1.0 - v * dv) / sy;
    let d_rho = -rho / z - u * v / z + rho * q / (z * z);
    let t = raw[4].tanh();
    (
        loss,
        [
            -du / sx,
            -dv / sy,
            d_sx * sigmoid(raw[2]),
            d_sy * sigmoid(raw[3]),
            d_rho * RHO_LIMIT * (1.0 - t * t),
        ],
    )
}

/// Network width of the two hidden layers.
pub const HIDDEN_WIDTH: usize = 100;
pub const HIDDEN_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousExample {
    pub features: Vec<f64>,
    /// Ego-frame truth per horizon.
    pub truth: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub kind: ContinuousKind,
    pub horizons: Vec<f64>,
    pub normalizer: Normalizer,
    pub specs: Vec<LayerSpec>,
    pub params: Parameters,
    pub seed: u64,
}

impl ContinuousModel {
    pub fn layer_specs(kind: ContinuousKind, horizons: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut width = kind.layout().len();
        for _ in 0..HIDDEN_LAYERS {
            specs.push(LayerSpec::dense(width, HIDDEN_WIDTH, Activation::Relu));
            width = HIDDEN_WIDTH;
        }
        specs.push(LayerSpec::dense(width, PARAMS_PER_HORIZON * horizons, Activation::Linear));
        specs
    }

    pub fn new(kind: ContinuousKind, horizons: Vec<f64>, normalizer: Normalizer, seed: u64) -> Result<Self, ModelError> {
        validate_horizons(&horizons)?;
        if normalizer.layout != kind.layout() {
            return Err(ModelError::Config(format!(
                "normalizer is for {}, model expects {}",
                normalizer.layout,
                kind.layout()
            )));
        }
        let specs = Self::layer_specs(kind, horizons.len());
        let params = Parameters::init(&specs, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            kind,
            horizons,
            normalizer,
            specs,
            params,
            seed,
        })
    }

    pub fn ego(&self, sample: &VruSample) -> Result<EgoSample, ModelError> {
        Ok(ego_transform(sample, self.kind == ContinuousKind::CTp)?)
    }

    fn input(&self, ego: &EgoSample) -> Result<Vec<f64>, ModelError> {
        Ok(self.normalizer.apply(&ego.features)?.values)
    }

    /// Raw outputs `(batch, 5 * horizons)` plus forward caches.
    fn forward(&self, x: ArrayView2<f64>) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>), ModelError> {
        let mut inputs = Vec::new();
        let mut pres = Vec::new();
        let mut h = x.to_owned();
        for (spec, p) in self.specs.iter().zip(&self.params.layers) {
            let pre = dense_forward(spec, p, h.view())?;
            let out = match spec.activation() {
                Activation::Relu => relu(&pre),
                Activation::Linear => pre.clone(),
            };
            inputs.push(h);
            pres.push(pre);
            h = out;
        }
        Ok((inputs, pres, h))
    }

    fn decode(&self, row: ArrayView1<f64>) -> Result<GaussianForecastSet, ModelError> {
        let forecasts = (0..self.horizons.len())
            .map(|k| {
                let o = k * PARAMS_PER_HORIZON;
                GaussianForecast::from_raw([row[o], row[o + 1], row[o + 2], row[o + 3], row[o + 4]])
            })
            .collect();
        GaussianForecastSet::new(self.horizons.clone(), forecasts)
    }

    /// Forecast in the sample's ego frame.
    pub fn forecast(&self, sample: &VruSample) -> Result<GaussianForecastSet, ModelError> {
        let ego = self.ego(sample)?;
        self.forecast_ego(&ego)
    }

    pub fn forecast_ego(&self, ego: &EgoSample) -> Result<GaussianForecastSet, ModelError> {
        let x = Array2::from_shape_vec((1, self.kind.layout().len()), self.input(ego)?)
            .map_err(|e| ModelError::Input(e.to_string()))?;
        let (_, _, out) = self.forward(x.view())?;
        self.decode(out.row(0))
    }

    pub fn examples(&self, samples: &[VruSample]) -> Result<(Vec<ContinuousExample>, ExclusionCounts), ModelError> {
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            if s.futures.len() != self.horizons.len() {
                return Err(ModelError::Input(format!("sample {} horizon count", s.id)));
            }
            let ego = self.ego(s)?;
            out.push(ContinuousExample {
                features: self.input(&ego)?,
                truth: ego.futures,
            });
        }
        Ok((out, ExclusionCounts::default()))
    }

    fn loss_impl(&self, batch: &[&ContinuousExample], with_grad: bool) -> Result<(f64, Option<Parameters>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptySet("batch"));
        }
        let width = self.kind.layout().len();
        let t = self.horizons.len();
        let mut x = Array2::zeros((batch.len(), width));
        for (b, ex) in batch.iter().enumerate() {
            x.row_mut(b).assign(&ArrayView1::from(&ex.features[..]));
        }
        let (inputs, pres, out) = self.forward(x.view())?;
        let norm = 1.0 / (batch.len() * t) as f64;
        let mut loss = 0.0;
        let mut dout = Array2::zeros(out.dim());
        for (b, ex) in batch.iter().enumerate() {
            for k in 0..t {
                let o = k * PARAMS_PER_HORIZON;
                let raw = [out[[b, o]], out[[b, o + 1]], out[[b, o + 2]], out[[b, o + 3]], out[[b, o + 4]]];
                let (l, g) = nll_raw_grad(raw, ex.truth[k]);
                loss += l;
                for (j, gj) in g.iter().enumerate() {
                    dout[[b, o + j]] = gj * norm;
                }
            }
        }
        if !with_grad {
            return Ok((loss * norm, None));
        }
        let mut grads = self.params.zeros_like();
        let mut d = dout;
        for i in (0..self.specs.len()).rev() {
            let dpre = match self.specs[i].activation() {
                Activation::Relu => relu_backward(&pres[i], &d),
                Activation::Linear => d,
            };
            let (dx, g) = dense_backward(&self.params.layers[i], inputs[i].view(), dpre.view())?;
            grads.layers[i] = g;
            d = dx;
        }
        Ok((loss * norm, Some(grads)))
    }
}

impl Trainable for ContinuousModel {
    type Example = ContinuousExample;

    fn parameters(&self) -> &Parameters {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    fn batch_loss(&self, batch: &[&ContinuousExample]) -> Result<f64, ModelError> {
        Ok(self.loss_impl(batch, false)?.0)
    }

    fn batch_loss_and_grad(&self, batch: &[&ContinuousExample]) -> Result<(f64, Parameters), ModelError> {
        let (l, g) = self.loss_impl(batch, true)?;
        Ok((l, g.expect("requested")))
    }
}

/// Fits the ego-frame normalizer on the training samples and trains the
/// Gaussian network on the negative log-likelihood.
pub fn train_continuous(
    kind: ContinuousKind,
    horizons: Vec<f64>,
    train_cfg: &TrainConfig,
    train: &[VruSample],
    val: &[VruSample],
    seed: u64,
) -> Result<(ContinuousModel, TrainReport), ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptySet("training"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptySet("validation"));
    }
    let with_pose = kind == ContinuousKind::CTp;
    let raw = train
        .iter()
        .map(|s| ego_transform(s, with_pose).map(|e| e.features))
        .collect::<Result<Vec<_>, _>>()?;
    let normalizer = Normalizer::fit(&raw)?;
    let mut model = ContinuousModel::new(kind, horizons, normalizer, seed)?;
    let (train_ex, _) = model.examples(train)?;
    let (val_ex, _) = model.examples(val)?;
    fit(&mut model, &train_ex, &val_ex, train_cfg, seed)
        .map(|report| (model, report))
}
