use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Parameters,
    second: Parameters,
}

impl AdamState {
    pub fn new(config: AdamConfig, like: &Parameters) -> Self {
        Self {
            config,
            step: 0,
            first: like.zeros_like(),
            second: like.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut Parameters, grads: &Parameters) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let layers = params
            .layers
            .iter_mut()
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
            .zip(&grads.layers);
        for (((p, m), v), g) in layers {
            let step = |w: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            };
            Zip::from(&mut p.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|w, m, v, &g| step(w, m, v, g));
            Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|w, m, v, &g| step(w, m, v, g));
        }
    }
}
