//! Bayesian model averaging over posterior samples, and calibration metrics.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::posterior::{Sampler, SwagState};
use crate::trainer::{softmax_rows, MlpModel};

pub const DEFAULT_BMA_SAMPLES: usize = 30;
pub const NLL_FLOOR: f64 = 1e-12;
pub const ECE_BINS: usize = 15;

/// A model whose parameters can be swapped for a flattened vector.
pub trait Classifier {
    fn param_count(&self) -> usize;
    fn classes(&self) -> usize;
    /// Class probabilities for each input row under `params`.
    fn predict_with(&self, params: &[f64], inputs: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl Classifier for MlpModel {
    fn param_count(&self) -> usize {
        MlpModel::param_count(self)
    }

    fn classes(&self) -> usize {
        MlpModel::classes(self)
    }

    fn predict_with(&self, params: &[f64], inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let model = MlpModel::unflatten(self.layer_sizes(), params)?;
        Ok(softmax_rows(&model.logits(inputs)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionSource {
    PointEstimate,
    SwagBma(usize),
}

impl PredictionSource {
    pub fn samples(&self) -> usize {
        match *self {
            PredictionSource::PointEstimate => 1,
            PredictionSource::SwagBma(s) => s,
        }
    }
}

impl fmt::Display for PredictionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictionSource::PointEstimate => f.write_str("point"),
            PredictionSource::SwagBma(_) => f.write_str("swag_bma"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveResult {
    pub probs: Array2<f64>,
    pub source: PredictionSource,
}

impl PredictiveResult {
    /// Every row is a distribution: entries in `[0, 1]`, sum within `tol` of 1.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.probs.rows().into_iter().all(|row| {
            row.iter().all(|p| (0.0..=1.0).contains(p)) && (row.sum() - 1.0).abs() <= tol
        })
    }
}

pub fn point_predict<M: Classifier>(
    model: &M,
    params: &[f64],
    inputs: ArrayView2<f64>,
) -> Result<PredictiveResult> {
    check_len(model.param_count(), params.len())?;
    Ok(PredictiveResult {
        probs: model.predict_with(params, inputs)?,
        source: PredictionSource::PointEstimate,
    })
}

/// Per-sample seeds used by [`bma_predict`]: the first `count` outputs of a
/// ChaCha8 stream seeded with `seed`.
pub fn sample_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Incremental mean `m += (p - m) / k`, which reproduces identical inputs
/// exactly.
#[derive(Default)]
struct RunningMean {
    count: usize,
    mean: Option<Array2<f64>>,
}

impl RunningMean {
    fn push(&mut self, p: Array2<f64>) {
        self.count += 1;
        match self.mean.as_mut() {
            None => self.mean = Some(p),
            Some(m) => {
                let k = self.count as f64;
                m.zip_mut_with(&p, |m, &p| *m += (p - *m) / k);
            }
        }
    }

    fn finish(self) -> Array2<f64> {
        self.mean.expect("at least one prediction")
    }
}

/// Averages predictive distributions over explicit parameter samples, in order.
pub fn average_predictions<M: Classifier>(
    model: &M,
    samples: &[Vec<f64>],
    inputs: ArrayView2<f64>,
) -> Result<PredictiveResult> {
    if samples.is_empty() {
        return Err(Error::Config("need at least one posterior sample".into()));
    }
    let mut mean = RunningMean::default();
    for theta in samples {
        check_len(model.param_count(), theta.len())?;
        mean.push(model.predict_with(theta, inputs)?);
    }
    Ok(PredictiveResult {
        probs: mean.finish(),
        source: PredictionSource::SwagBma(samples.len()),
    })
}

pub fn bma_predict_with<M: Classifier>(
    model: &M,
    sampler: &Sampler,
    inputs: ArrayView2<f64>,
    samples: usize,
    seed: u64,
) -> Result<PredictiveResult> {
    if samples == 0 {
        return Err(Error::Config("BMA sample count must be at least 1".into()));
    }
    check_len(model.param_count(), sampler.dim())?;
    let mut mean = RunningMean::default();
    for s in sample_seeds(seed, samples) {
        mean.push(model.predict_with(&sampler.draw(s)?, inputs)?);
    }
    Ok(PredictiveResult {
        probs: mean.finish(),
        source: PredictionSource::SwagBma(samples),
    })
}

/// Monte-Carlo estimate of the posterior predictive from `samples` draws.
pub fn bma_predict<M: Classifier>(
    model: &M,
    state: &SwagState,
    inputs: ArrayView2<f64>,
    samples: usize,
    seed: u64,
) -> Result<PredictiveResult> {
    if samples == 0 {
        return Err(Error::Config("BMA sample count must be at least 1".into()));
    }
    check_len(model.param_count(), state.dim())?;
    bma_predict_with(model, &state.sampler()?, inputs, samples, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub source: String,
    #[serde(rename = "S")]
    pub samples: usize,
    pub nll: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub seed: Option<u64>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn check_labels(probs: &Array2<f64>, labels: &[usize]) -> Result<()> {
    check_len(probs.nrows(), labels.len())?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.ncols()) {
        return Err(Error::Data(format!("label {bad} outside [0, {})", probs.ncols())));
    }
    Ok(())
}

/// Binned gap between confidence and accuracy over `bins` equal-width bins;
/// bin `b` holds confidences in `(b/bins, (b+1)/bins]`, with 0 in the first.
pub fn expected_calibration_error(probs: &Array2<f64>, labels: &[usize], bins: usize) -> Result<f64> {
    check_labels(probs, labels)?;
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut confidence = vec![0.0; bins];
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        let pred = argmax(row.iter().copied());
        let conf = row[pred];
        let b = ((conf * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[b] += 1;
        correct[b] += usize::from(pred == y);
        confidence[b] += conf;
    }
    let n = labels.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (correct[b] as f64 / nb - confidence[b] / nb).abs()
        })
        .sum())
}

pub fn evaluate(pred: &PredictiveResult, labels: &[usize], seed: Option<u64>) -> Result<EvalMetrics> {
    check_labels(&pred.probs, labels)?;
    if labels.is_empty() {
        return Err(Error::Data("cannot evaluate an empty prediction set".into()));
    }
    let n = labels.len() as f64;
    let mut nll = 0.0;
    let mut hits = 0usize;
    for (row, &y) in pred.probs.rows().into_iter().zip(labels) {
        nll -= row[y].max(NLL_FLOOR).ln();
        hits += usize::from(argmax(row.iter().copied()) == y);
    }
    Ok(EvalMetrics {
        source: pred.source.to_string(),
        samples: pred.source.samples(),
        nll: (nll / n).max(0.0),
        accuracy: hits as f64 / n,
        ece: expected_calibration_error(&pred.probs, labels, ECE_BINS)?,
        seed,
    })
}
