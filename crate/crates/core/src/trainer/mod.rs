//! Desk-scale supervised training that produces the SGD iterate stream.

mod dataset;
mod idx;
mod mlp;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{synthetic_dataset, synthetic_dataset_with_spread, Dataset, DEFAULT_SPREAD};
pub use idx::{encode_idx_u8, parse_idx, read_idx, IdxData, IdxTensor, IDX_TYPE_I32, IDX_TYPE_U8};
pub use mlp::{
    parameter_count, softmax_rows, MlpModel, MlpSnapshot, DESK_LAYERS, FULL_SIZE_LAYERS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub minibatch_size: usize,
    pub minibatches_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch_size: 100,
            minibatches_per_epoch: 600,
            epochs: 1,
            learning_rate: 0.05,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 || self.minibatches_per_epoch == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "minibatch_size, minibatches_per_epoch and epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Plain minibatch SGD with a fixed learning rate.
///
/// Minibatches walk a seeded permutation of the dataset, reshuffling whenever
/// it is exhausted, so the trajectory depends only on the seed.
#[derive(Debug, Clone)]
pub struct SgdTrainer {
    config: TrainConfig,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: u64,
}

impl SgdTrainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Optimisation steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.config.minibatch_size);
        while batch.len() < self.config.minibatch_size {
            if self.cursor == self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (self.config.minibatch_size - batch.len()).min(n - self.cursor);
            batch.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        batch
    }

    /// Runs one epoch, calling `observer` with the flattened parameters after
    /// every minibatch. Returns the mean minibatch loss.
    pub fn sgd_epoch<F>(&mut self, model: &mut MlpModel, data: &Dataset, observer: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> Result<()>,
    {
        self.sgd_epoch_with(model, data, |_| Ok(()), observer)
    }

    /// As [`sgd_epoch`](Self::sgd_epoch), additionally handing each
    /// minibatch's example indices to `fetch` before the step.
    pub fn sgd_epoch_with<G, F>(
        &mut self,
        model: &mut MlpModel,
        data: &Dataset,
        mut fetch: G,
        mut observer: F,
    ) -> Result<f64>
    where
        G: FnMut(&[usize]) -> Result<()>,
        F: FnMut(&[f64]) -> Result<()>,
    {
        if model.inputs() != data.features() {
            return Err(Error::Dimension {
                expected: model.inputs(),
                actual: data.features(),
            });
        }
        if model.classes() < data.classes() {
            return Err(Error::Dimension {
                expected: data.classes(),
                actual: model.classes(),
            });
        }
        if self.order.len() != data.len() {
            self.order.clear();
            self.cursor = 0;
        }
        let mut params = model.flatten();
        let mut total = 0.0;
        for _ in 0..self.config.minibatches_per_epoch {
            self.step += 1;
            let indices = self.next_batch(data.len());
            fetch(&indices)?;
            let (x, y) = data.batch(&indices);
            let (loss, grad) = model
                .loss_and_gradient(x.view(), &y)
                .map_err(|e| match e {
                    Error::Divergence { loss, .. } => Error::Divergence {
                        step: self.step,
                        loss,
                    },
                    other => other,
                })?;
            let lr = self.config.learning_rate;
            params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    step: self.step,
                    loss,
                });
            }
            model.set_params(&params)?;
            observer(&params)?;
            total += loss;
        }
        Ok(total / self.config.minibatches_per_epoch as f64)
    }
}
