//! Streaming low-rank-plus-diagonal Gaussian posterior over SGD iterates.
//!
//! Every accepted iterate `θ` updates the running mean `θ̄` and raw second
//! moment, then appends the deviation column `θ - θ̄` (taken after the mean
//! update) to a `P x K_max` matrix held by a storage backend. Once `K_max`
//! columns are stored the oldest column is overwritten.
//!
//! Samples are drawn as
//!
//! ```text
//! θ̄ + s/√2 · diag^½ ∘ z₁ + s/√(2(K-1)) · D̂ z₂,    z₁ ~ N(0, I_P), z₂ ~ N(0, I_K)
//! ```
//!
//! where `diag = max(E[θ²] - θ̄², ε)`. With fewer than two stored columns the
//! low-rank term is dropped.

mod checkpoint;
mod columns;
mod moments;

use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::store::{ArrayHandle, ElementWidth};

pub use checkpoint::{CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use columns::{ColumnStore, DeviationPlacement, DirectColumns};
pub use moments::MomentAccumulator;

/// Flattened model parameters. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A parameter vector drawn from the approximate posterior.
pub type PosteriorSample = ParamVector;

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Data(format!("non-finite parameter at index {i}"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwagConfig {
    /// Leading iterates discarded before any moment update.
    pub burn_in: u64,
    /// Capacity of the deviation matrix, in columns.
    pub max_columns: usize,
    /// Sampling scale `s`.
    pub scale: f64,
    /// Floor `ε` on the diagonal variance.
    pub variance_floor: f64,
    pub element_width: ElementWidth,
    /// Permit `max_columns` above the parameter count. Such a matrix cannot add
    /// rank, so this is only useful for tiny test problems.
    pub allow_overcomplete: bool,
}

impl Default for SwagConfig {
    fn default() -> Self {
        Self {
            burn_in: 0,
            max_columns: 600,
            scale: 1.0,
            variance_floor: 1e-12,
            element_width: ElementWidth::Four,
            allow_overcomplete: false,
        }
    }
}

impl SwagConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::Config("parameter count must be positive".into()));
        }
        if self.max_columns == 0 {
            return Err(Error::Config("max_columns must be at least 1".into()));
        }
        if self.max_columns > dim && !self.allow_overcomplete {
            return Err(Error::Config(format!(
                "max_columns {} exceeds the parameter count {dim}",
                self.max_columns
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.variance_floor >= 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::Config(format!(
                "variance_floor must be nonnegative, got {}",
                self.variance_floor
            )));
        }
        Ok(())
    }
}

/// The posterior approximation: running moments plus the deviation matrix.
///
/// Updates and checkpoints need exclusive access; sampling and accessors only
/// borrow and may run concurrently.
#[derive(Debug)]
pub struct SwagState {
    config: SwagConfig,
    moments: MomentAccumulator,
    columns: Box<dyn ColumnStore>,
    total_seen: u64,
    stored: usize,
    next_slot: usize,
    scratch: Vec<u8>,
}

impl SwagState {
    /// Creates an empty posterior over `dim` parameters, allocating its
    /// deviation matrix as described by `placement`.
    pub fn new(config: SwagConfig, dim: usize, placement: &DeviationPlacement) -> Result<Self> {
        config.validate(dim)?;
        let columns = placement.allocate(dim, config.max_columns, config.element_width)?;
        Ok(Self::from_parts(
            config,
            MomentAccumulator::new(dim),
            columns,
            0,
            0,
        ))
    }

    fn from_parts(
        config: SwagConfig,
        moments: MomentAccumulator,
        columns: Box<dyn ColumnStore>,
        total_seen: u64,
        stored: usize,
    ) -> Self {
        Self {
            config,
            moments,
            columns,
            total_seen,
            stored,
            next_slot: stored % config.max_columns,
            scratch: Vec::new(),
        }
    }

    pub fn config(&self) -> &SwagConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.moments.dim()
    }

    pub fn moments(&self) -> &MomentAccumulator {
        &self.moments
    }

    pub fn mean(&self) -> &[f64] {
        self.moments.mean()
    }

    /// Accepted iterates `T`.
    pub fn accepted(&self) -> u64 {
        self.moments.count()
    }

    /// Update calls including burned-in ones.
    pub fn total_seen(&self) -> u64 {
        self.total_seen
    }

    /// Stored deviation columns `K = min(T, K_max)`.
    pub fn rank(&self) -> usize {
        self.stored
    }

    pub fn handle(&self) -> &ArrayHandle {
        self.columns.handle()
    }

    pub fn column_store(&self) -> &dyn ColumnStore {
        self.columns.as_ref()
    }

    /// Feeds one SGD iterate. Burn-in iterates only advance `total_seen`.
    pub fn update(&mut self, theta: &[f64]) -> Result<()> {
        check_len(self.dim(), theta.len())?;
        check_finite(theta)?;
        self.total_seen += 1;
        if self.total_seen <= self.config.burn_in {
            return Ok(());
        }
        self.moments.push(theta)?;
        let deviation: Vec<f64> = theta
            .iter()
            .zip(self.moments.mean())
            .map(|(x, m)| x - m)
            .collect();
        self.scratch.clear();
        self.config
            .element_width
            .encode_into(&deviation, &mut self.scratch);
        self.columns.write_column(self.next_slot, &self.scratch)?;
        self.next_slot = (self.next_slot + 1) % self.config.max_columns;
        self.stored = (self.stored + 1).min(self.config.max_columns);
        Ok(())
    }

    /// Storage slot of the `k`-th oldest stored column.
    fn slot(&self, k: usize) -> usize {
        if self.stored < self.config.max_columns {
            k
        } else {
            (self.next_slot + k) % self.config.max_columns
        }
    }

    /// Raw bytes of the `k`-th oldest stored column.
    pub fn deviation_column_bytes(&self, k: usize) -> Result<Vec<u8>> {
        if k >= self.stored {
            return Err(Error::OutOfBounds(format!(
                "deviation column {k} of {}",
                self.stored
            )));
        }
        let mut out = vec![0u8; self.columns.handle().column_bytes()];
        self.columns.read_column(self.slot(k), &mut out)?;
        Ok(out)
    }

    pub fn deviation_column(&self, k: usize) -> Result<Vec<f64>> {
        let bytes = self.deviation_column_bytes(k)?;
        Ok(self.config.element_width.decode(&bytes))
    }

    /// Stored deviation columns, oldest first.
    pub fn deviation_columns(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.stored).map(|k| self.deviation_column(k)).collect()
    }

    /// Diagonal variance `max(E[θ²] - θ̄², ε)`.
    pub fn diag_variance(&self) -> Result<ParamVector> {
        if self.accepted() == 0 {
            return Err(Error::EmptyPosterior);
        }
        Ok(ParamVector(self.moments.variance(self.config.variance_floor)))
    }

    /// Loads the posterior factors into memory for repeated sampling.
    pub fn sampler(&self) -> Result<Sampler> {
        let variance = self.diag_variance()?;
        let dim = self.dim();
        let rank = self.stored;
        let mut deviations = Vec::with_capacity(dim * rank);
        for k in 0..rank {
            deviations.extend(self.deviation_column(k)?);
        }
        Ok(Sampler {
            mean: self.mean().to_vec(),
            diag_sd: variance.iter().map(|v| v.sqrt()).collect(),
            deviations,
            rank,
            scale: self.config.scale,
        })
    }

    /// Draws one sample, reproducible from `seed`.
    pub fn sample(&self, seed: u64) -> Result<PosteriorSample> {
        self.sampler()?.draw(seed)
    }

    /// Pushes buffered deviation columns to storage and flushes the backing array.
    pub fn flush(&mut self) -> Result<()> {
        self.columns.flush()
    }
}

/// In-memory copy of a posterior's factors.
#[derive(Debug, Clone)]
pub struct Sampler {
    mean: Vec<f64>,
    diag_sd: Vec<f64>,
    /// `P x K`, column-major, oldest column first.
    deviations: Vec<f64>,
    rank: usize,
    scale: f64,
}

impl Sampler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn draw(&self, seed: u64) -> Result<PosteriorSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.dim();
        let diag_coef = self.scale / std::f64::consts::SQRT_2;
        let mut out: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.diag_sd)
            .map(|(m, sd)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + diag_coef * sd * z
            })
            .collect();
        if self.rank >= 2 {
            let coef = self.scale / (2.0 * (self.rank as f64 - 1.0)).sqrt();
            for column in self.deviations.chunks_exact(dim) {
                let z: f64 = StandardNormal.sample(&mut rng);
                let w = coef * z;
                for (o, d) in out.iter_mut().zip(column) {
                    *o += w * d;
                }
            }
        }
        ParamVector::new(out)
    }
}

/// Bytes of a `params x rank` deviation matrix at `element_width` bytes per entry.
pub fn estimate_size(params: u64, rank: u64, element_width: u64) -> Result<u64> {
    if params == 0 || rank == 0 || element_width == 0 {
        return Err(Error::Range(format!(
            "size inputs must be positive, got ({params}, {rank}, {element_width})"
        )));
    }
    params
        .checked_mul(rank)
        .and_then(|v| v.checked_mul(element_width))
        .filter(|&v| v <= i64::MAX as u64)
        .ok_or_else(|| {
            Error::Range(format!(
                "{params} x {rank} x {element_width} bytes overflows a signed 64-bit size"
            ))
        })
}

/// Rank reached after `epochs` epochs of per-minibatch updates.
pub fn rank_after_epochs(
    epochs: u64,
    updates_per_epoch: u64,
    burn_in: u64,
    max_columns: Option<u64>,
) -> u64 {
    let accepted = (epochs * updates_per_epoch).saturating_sub(burn_in);
    max_columns.map_or(accepted, |k| accepted.min(k))
}
