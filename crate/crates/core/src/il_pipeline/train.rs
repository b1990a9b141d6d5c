use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::examples::StepExample;
use super::policy::{LinearPolicy, LossWeights};
use crate::seed::rng_for;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss_weights: LossWeights,
    /// Update only the token embeddings.
    pub freeze_heads: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
            loss_weights: LossWeights::default(),
            freeze_heads: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Domain(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub final_accuracy: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, range: std::ops::Range<usize>) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in range {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch training of all heads (or only the embeddings when
/// `freeze_heads` is set), starting from `policy`.
pub fn train(policy: LinearPolicy, dataset: &[StepExample], config: &TrainConfig) -> Result<(LinearPolicy, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Domain("cannot train on an empty dataset".into()));
    }
    let mut policy = policy;
    let n_params = policy.shape.param_count();
    let trainable = if config.freeze_heads { policy.shape.e_range() } else { 0..n_params };
    let mut rng = rng_for(config.seed, &["train"]);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut adam = Adam::new(n_params);
    let mut grad = vec![0.0; n_params];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&StepExample> = chunk.iter().map(|&i| &dataset[i]).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = policy.batch_loss(&batch, &config.loss_weights, Some(&mut grad))?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {b}; learning rate {}",
                    config.learning_rate
                )));
            }
            match config.optimizer {
                Optimizer::Sgd => {
                    for i in trainable.clone() {
                        policy.params[i] -= config.learning_rate * grad[i];
                    }
                }
                Optimizer::Adam => adam.step(&mut policy.params, &grad, config.learning_rate, trainable.clone()),
            }
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let final_accuracy = accuracy(&policy, dataset)?;
    Ok((policy, TrainReport { epoch_losses, final_accuracy }))
}

/// Fraction of examples whose fused argmax is the labelled candidate.
pub fn accuracy(policy: &LinearPolicy, dataset: &[StepExample]) -> Result<f64> {
    let mut hits = 0usize;
    for ex in dataset {
        if policy.choose(&ex.input)? == ex.labels.constrained_idx {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len().max(1) as f64)
}
