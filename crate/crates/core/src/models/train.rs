use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::{AdamConfig, AdamState, Objective, Parameters};

/// A model whose parameters can be fitted by mini-batch gradient descent on
/// precomputed examples.
pub trait Trainable {
    type Example;

    fn parameters(&self) -> &Parameters;
    fn parameters_mut(&mut self) -> &mut Parameters;
    /// Mean loss over the batch.
    fn batch_loss(&self, batch: &[&Self::Example]) -> Result<f64, ModelError>;
    /// Mean loss over the batch and its gradient.
    fn batch_loss_and_grad(&self, batch: &[&Self::Example]) -> Result<(f64, Parameters), ModelError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 40,
            max_epochs: 500,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(ModelError::Config("batch_size and max_epochs must be positive".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(ModelError::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionCounts {
    /// Truth outside the grid at some horizon.
    pub out_of_grid: usize,
    /// Truth on an obstacle cell of a masked target.
    pub truth_on_obstacle: usize,
}

impl ExclusionCounts {
    pub fn total(&self) -> usize {
        self.out_of_grid + self.truth_on_obstacle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    /// Validation loss of the initial parameters.
    pub initial_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Number of epochs run.
    pub stopping_epoch: usize,
    pub train_examples: usize,
    pub val_examples: usize,
    pub excluded_train: ExclusionCounts,
    pub excluded_val: ExclusionCounts,
}

/// Dataset mean of a per-batch mean loss.
pub fn dataset_loss<M: Trainable>(model: &M, examples: &[M::Example], batch_size: usize) -> Result<f64, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptySet("evaluation"));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&M::Example> = chunk.iter().collect();
        total += model.batch_loss(&refs)? * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Adam with seeded shuffling and early stopping on validation loss; the
/// parameters of the best epoch are restored before returning.
pub fn fit<M: Trainable>(
    model: &mut M,
    train: &[M::Example],
    val: &[M::Example],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySet("training"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptySet("validation"));
    }
    // stream 1 keeps the shuffle independent of the initialization stream
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(cfg.adam, model.parameters());
    let initial_val_loss = dataset_loss(model, val, cfg.batch_size)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        seed,
        initial_val_loss,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopping_epoch: 0,
        train_examples: train.len(),
        val_examples: val.len(),
        excluded_train: ExclusionCounts::default(),
        excluded_val: ExclusionCounts::default(),
    };
    let mut best = model.parameters().clone();
    let mut wait = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&M::Example> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = model.batch_loss_and_grad(&batch)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            adam.update(model.parameters_mut(), &grads);
            epoch_loss += loss * batch.len() as f64;
        }
        let val_loss = dataset_loss(model, val, cfg.batch_size)?;
        report.train_loss.push(epoch_loss / train.len() as f64);
        report.val_loss.push(val_loss);
        report.stopping_epoch = epoch;
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best.clone_from(model.parameters());
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }
    *model.parameters_mut() = best;
    Ok(report)
}

/// Batch loss of a model as a function of its parameters, for gradient
/// checking.
pub struct BatchObjective<'a, M: Trainable + Clone> {
    pub model: &'a M,
    pub batch: Vec<&'a M::Example>,
}

impl<M: Trainable + Clone> BatchObjective<'_, M> {
    fn with_params(&self, params: &Parameters) -> M {
        let mut m = self.model.clone();
        m.parameters_mut().clone_from(params);
        m
    }
}

impl<M: Trainable + Clone> Objective for BatchObjective<'_, M> {
    fn loss(&self, params: &Parameters) -> f64 {
        self.with_params(params)
            .batch_loss(&self.batch)
            .expect("objective evaluation")
    }

    fn loss_and_grad(&self, params: &Parameters) -> (f64, Parameters) {
        self.with_params(params)
            .batch_loss_and_grad(&self.batch)
            .expect("objective evaluation")
    }
}
