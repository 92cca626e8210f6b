use crate::error::{check_len, Result};

/// Streaming first and raw second moments of accepted iterates, in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    sq_mean: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            sq_mean: vec![0.0; dim],
        }
    }

    pub(crate) fn from_parts(count: u64, mean: Vec<f64>, sq_mean: Vec<f64>) -> Self {
        debug_assert_eq!(mean.len(), sq_mean.len());
        Self {
            count,
            mean,
            sq_mean,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sq_mean(&self) -> &[f64] {
        &self.sq_mean
    }

    /// Folds one iterate into the running means.
    pub fn push(&mut self, theta: &[f64]) -> Result<()> {
        check_len(self.dim(), theta.len())?;
        self.count += 1;
        let n = self.count as f64;
        for ((m, q), &x) in self.mean.iter_mut().zip(self.sq_mean.iter_mut()).zip(theta) {
            *m += (x - *m) / n;
            *q += (x * x - *q) / n;
        }
        Ok(())
    }

    /// `max(sq_mean - mean^2, floor)` elementwise.
    pub fn variance(&self, floor: f64) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.sq_mean)
            .map(|(m, q)| (q - m * m).max(floor))
            .collect()
    }
}
