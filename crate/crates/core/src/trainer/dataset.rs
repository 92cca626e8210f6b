use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::idx::{read_idx, IdxData};
use crate::error::{Error, Result};

/// Supervised classification data with inputs scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = inputs.nrows();
        if n == 0 || inputs.ncols() == 0 {
            return Err(Error::Data("dataset must have at least one example and feature".into()));
        }
        if labels.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
        }
        if inputs.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("inputs must lie in [0, 1]".into()));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the rows at `indices` into a new batch.
    pub fn batch(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let x = self.inputs.select(Axis(0), indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// The first `n` examples (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Splits into the first `n` examples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::Data(format!(
                "split point {n} must leave both parts of a {}-example dataset nonempty",
                self.len()
            )));
        }
        let part = |range: std::ops::Range<usize>| Dataset {
            inputs: self.inputs.slice(ndarray::s![range.clone(), ..]).to_owned(),
            labels: self.labels[range].to_vec(),
            classes: self.classes,
        };
        Ok((part(0..n), part(n..self.len())))
    }

    /// Loads an MNIST-style image/label IDX pair.
    pub fn load_mnist(images: &Path, labels: &Path) -> Result<Self> {
        let img = read_idx(images)?;
        let lab = read_idx(labels)?;
        let (IdxData::U8(pixels), IdxData::U8(classes)) = (img.data, lab.data) else {
            return Err(Error::Format("MNIST files must hold unsigned bytes".into()));
        };
        if img.dims.len() < 2 || lab.dims.len() != 1 {
            return Err(Error::Format(format!(
                "unexpected MNIST shapes {:?} and {:?}",
                img.dims, lab.dims
            )));
        }
        let n = img.dims[0];
        let d: usize = img.dims[1..].iter().product();
        let inputs = Array2::from_shape_vec((n, d), pixels.iter().map(|&p| p as f64 / 255.0).collect())
            .map_err(|e| Error::Format(e.to_string()))?;
        let labels = classes.iter().map(|&c| c as usize).collect();
        Dataset::new(inputs, labels, 10)
    }
}

pub const DEFAULT_SPREAD: f64 = 0.1;

/// Gaussian class blobs with centres drawn uniformly in `[0.1, 0.9]^d`,
/// clipped to `[0, 1]`. Labels cycle through the classes.
pub fn synthetic_dataset(seed: u64, n: usize, d: usize, classes: usize) -> Result<Dataset> {
    synthetic_dataset_with_spread(seed, n, d, classes, DEFAULT_SPREAD)
}

pub fn synthetic_dataset_with_spread(
    seed: u64,
    n: usize,
    d: usize,
    classes: usize,
    spread: f64,
) -> Result<Dataset> {
    if n == 0 || d == 0 || classes == 0 {
        return Err(Error::Config(format!(
            "synthetic dataset needs N, d, C >= 1, got ({n}, {d}, {classes})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| rng.random_range(0.1..0.9)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Config(e.to_string()))?;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut inputs = Array2::zeros((n, d));
    for (mut row, &label) in inputs.rows_mut().into_iter().zip(&labels) {
        for (x, c) in row.iter_mut().zip(&centres[label]) {
            *x = (c + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Dataset::new(inputs, labels, classes)
}
