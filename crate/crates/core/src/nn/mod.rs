//! Small differentiable-network kernel: dense and same-padded convolution
//! layers, ReLU, per-grid softmax with cross entropy, Adam, and a
//! finite-difference gradient checker.
//!
//! Dense activations are `(batch, features)` matrices. Convolution
//! activations are `(channels, batch * side * side)` matrices, sample-major
//! inside each channel row, so consecutive convolutions need no transposes.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_network, write_network};
pub use gradcheck::{gradient_check, GradCheckReport, Objective};
pub use layers::{
    conv2d_same_backward, conv2d_same_forward, dense_backward, dense_forward, relu, relu_backward,
    ConvCache,
};
pub use loss::{cross_entropy_grids, softmax_cross_entropy, softmax_grid};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
    },
    Conv {
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self::Dense {
            fan_in,
            fan_out,
            activation,
        }
    }

    pub fn conv(kernel: usize, in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        Self::Conv {
            kernel,
            in_channels,
            out_channels,
            activation,
        }
    }

    pub fn activation(&self) -> Activation {
        match *self {
            Self::Dense { activation, .. } | Self::Conv { activation, .. } => activation,
        }
    }

    /// Weight matrix shape: `(fan_out, fan_in)` for dense layers,
    /// `(out_channels, in_channels * kernel^2)` for convolutions.
    pub fn weight_shape(&self) -> (usize, usize) {
        match *self {
            Self::Dense { fan_in, fan_out, .. } => (fan_out, fan_in),
            Self::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => (out_channels, in_channels * kernel * kernel),
        }
    }

    pub fn param_count(&self) -> usize {
        let (rows, cols) = self.weight_shape();
        rows * cols + rows
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = match *self {
            Self::Dense { fan_in, fan_out, .. } => fan_in > 0 && fan_out > 0,
            Self::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => (kernel == 1 || kernel == 3) && in_channels > 0 && out_channels > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidSpec(format!("{self:?}")))
        }
    }

    /// He-uniform bound for ReLU layers, Glorot-uniform for linear ones.
    fn init_bound(&self) -> f64 {
        let (rows, cols) = self.weight_shape();
        let (fan_in, fan_out) = match *self {
            Self::Dense { .. } => (cols, rows),
            Self::Conv { kernel, .. } => (cols, rows * kernel * kernel),
        };
        match self.activation() {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            Activation::Linear => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(spec: &LayerSpec) -> Self {
        let (rows, cols) = spec.weight_shape();
        Self {
            weights: Array2::zeros((rows, cols)),
            bias: Array1::zeros(rows),
        }
    }
}

/// Weights and biases of every layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
}

impl Parameters {
    /// Random initialization with zero biases.
    pub fn init<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Self {
        let layers = specs
            .iter()
            .map(|spec| {
                let bound = spec.init_bound();
                let mut p = LayerParams::zeros(spec);
                p.weights.mapv_inplace(|_| rng.random_range(-bound..bound));
                p
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(specs: &[LayerSpec]) -> Self {
        Self {
            layers: specs.iter().map(LayerParams::zeros).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, specs: &[LayerSpec]) -> bool {
        self.layers.len() == specs.len()
            && self.layers.iter().zip(specs).all(|(l, s)| {
                let (r, c) = s.weight_shape();
                l.weights.dim() == (r, c) && l.bias.len() == r
            })
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights *= k;
            l.bias *= k;
        }
    }

    /// Visits every scalar with its flat position.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    /// Mutable access to the scalar at flat position `i`.
    pub fn get_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let nw = l.weights.len();
            if i < nw {
                return l.weights.as_slice_mut().map(|s| &mut s[i]);
            }
            i -= nw;
            let nb = l.bias.len();
            if i < nb {
                return l.bias.as_slice_mut().map(|s| &mut s[i]);
            }
            i -= nb;
        }
        None
    }

    /// Adds uniform noise in `[-scale, scale]` to every scalar, biases
    /// included. Gradient checks run at such points so that no ReLU input
    /// sits exactly on the kink, as zero biases over dead units would.
    pub fn jitter<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for l in &mut self.layers {
            l.weights.mapv_inplace(|w| w + rng.random_range(-scale..=scale));
            l.bias.mapv_inplace(|b| b + rng.random_range(-scale..=scale));
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}
