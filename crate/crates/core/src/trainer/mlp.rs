use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Fully connected classifier: ReLU hidden layers, softmax output.
///
/// Flattened parameter order is, layer by layer, the `out x in` weight matrix
/// in row-major order followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Serialisable parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSnapshot {
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
}

pub const DESK_LAYERS: [usize; 4] = [784, 32, 32, 10];
/// Four weight layers, 2,797,010 parameters.
pub const FULL_SIZE_LAYERS: [usize; 5] = [784, 1000, 1000, 1000, 10];

pub fn parameter_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpModel {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "need at least two nonzero layer sizes, got {layer_sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
                rng.random_range(-bound..bound)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        let mut m = Self::new(layer_sizes, 0)?;
        m.weights.iter_mut().for_each(|w| w.fill(0.0));
        Ok(m)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        parameter_count(&self.layer_sizes)
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len(self.param_count(), params.len())?;
        let mut rest = params;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (wp, tail) = rest.split_at(w.len());
            w.iter_mut().zip(wp).for_each(|(dst, src)| *dst = *src);
            let (bp, tail) = tail.split_at(b.len());
            b.iter_mut().zip(bp).for_each(|(dst, src)| *dst = *src);
            rest = tail;
        }
        Ok(())
    }

    pub fn unflatten(layer_sizes: &[usize], params: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(layer_sizes)?;
        m.set_params(params)?;
        Ok(m)
    }

    pub fn snapshot(&self) -> MlpSnapshot {
        MlpSnapshot {
            layer_sizes: self.layer_sizes.clone(),
            params: self.flatten(),
        }
    }

    pub fn from_snapshot(s: &MlpSnapshot) -> Result<Self> {
        Self::unflatten(&s.layer_sizes, &s.params)
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        check_len(self.inputs(), inputs.ncols())
    }

    /// Pre-softmax outputs, one row per input.
    pub fn logits(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs)?;
        let last = self.weights.len() - 1;
        let mut h = inputs.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(&w.t()) + b;
            if l < last {
                h.mapv_inplace(relu);
            }
        }
        Ok(h)
    }

    pub fn predict_proba(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(inputs)?))
    }

    /// Mean cross-entropy over the batch and its flattened gradient.
    pub fn loss_and_gradient(
        &self,
        inputs: ArrayView2<f64>,
        labels: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_inputs(&inputs)?;
        check_len(inputs.nrows(), labels.len())?;
        if labels.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes()) {
            return Err(Error::Data(format!("label {bad} outside [0, {})", self.classes())));
        }
        let n = labels.len() as f64;

        // Forward, keeping every layer's input and pre-activation.
        let mut layer_inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut h = inputs.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = h.dot(&w.t()) + b;
            layer_inputs.push(h);
            h = if l + 1 < self.weights.len() {
                z.mapv(relu)
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let logits = h;
        let probs = softmax_rows(&logits);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            loss += log_sum_exp(row.iter().copied()) - row[y];
        }
        loss /= n;
        if !loss.is_finite() || probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { step: 0, loss });
        }

        // Backward.
        let mut delta = probs;
        for (i, &y) in labels.iter().enumerate() {
            delta[[i, y]] -= 1.0;
        }
        delta /= n;
        let mut grads_w = vec![Array2::zeros((0, 0)); self.weights.len()];
        let mut grads_b = vec![Array1::zeros(0); self.weights.len()];
        for l in (0..self.weights.len()).rev() {
            grads_w[l] = delta.t().dot(&layer_inputs[l]);
            grads_b[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l]);
                back.zip_mut_with(&pre[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        let mut grad: Vec<f64> = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads_w.iter().zip(&grads_b) {
            grad.extend(gw.iter());
            grad.extend(gb.iter());
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step: 0, loss });
        }
        Ok((loss, grad))
    }

    /// Flattened gradient of the mean cross-entropy over a batch.
    pub fn gradient(&self, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(inputs, labels)?.1)
    }

    pub fn mean_loss(&self, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        check_len(inputs.nrows(), labels.len())?;
        let logits = self.logits(inputs)?;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let row = logits.row(i);
                log_sum_exp(row.iter().copied()) - row[y]
            })
            .sum();
        Ok(total / labels.len() as f64)
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}
