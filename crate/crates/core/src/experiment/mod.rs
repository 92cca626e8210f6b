//! The benchmark protocol: train with per-minibatch posterior updates on a
//! chosen storage backend, timing every phase of every epoch.

mod layout;
mod report;
mod summary;

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coalesce::CoalescerConfig;
use crate::error::{Error, Result};
use crate::posterior::{estimate_size, DeviationPlacement, SwagConfig, SwagState};
use crate::store::{
    ArrayHandle, BackendConfig, BackendKind, BackendStats, ElementWidth, Layout, StorageBackend,
};
use crate::trainer::{
    parameter_count, synthetic_dataset, Dataset, MlpModel, SgdTrainer, TrainConfig, DESK_LAYERS,
};

pub use layout::{layout_pathology, LayoutReport, LayoutRun};
pub use report::{emit, read_run, write_csv, CSV_HEADER};
pub use summary::{summarize, BackendSummary, EpochStat, Summary, TotalStat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_examples")]
        examples: usize,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
    },
}

fn default_examples() -> usize {
    1000
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            seed: 0,
            examples: default_examples(),
        }
    }
}

impl DataSource {
    /// Synthetic data takes its width and class count from the model shape.
    pub fn load(&self, features: usize, classes: usize) -> Result<Dataset> {
        match self {
            DataSource::Synthetic { seed, examples } => {
                synthetic_dataset(*seed, *examples, features, classes)
            }
            DataSource::Mnist { images, labels } => Dataset::load_mnist(images, labels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub backend: BackendConfig,
    /// Further backends run with identical settings, in order, after `backend`.
    pub compare: Vec<BackendConfig>,
    /// Overrides the backend's default label in reports.
    pub label: Option<String>,
    pub train: TrainConfig,
    pub swag: SwagConfig,
    pub repetitions: usize,
    pub coalescer: Option<CoalescerConfig>,
    pub layout: Layout,
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub layer_sizes: Vec<usize>,
    pub model_seed: u64,
    /// Posterior draws taken at the end of each epoch; 0 skips the phase.
    pub samples_per_epoch: usize,
    /// Also place the training set on the backend and read every minibatch's
    /// examples through it, so data and posterior share one memory tier (as
    /// they do behind a transparent DRAM cache).
    pub stage_dataset: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            backend: BackendConfig::default(),
            compare: Vec::new(),
            label: None,
            train: TrainConfig::default(),
            swag: SwagConfig::default(),
            repetitions: 3,
            coalescer: None,
            layout: Layout::ColMajor,
            output_dir: PathBuf::from("results"),
            data: DataSource::default(),
            layer_sizes: DESK_LAYERS.to_vec(),
            model_seed: 0,
            samples_per_epoch: 0,
            stage_dataset: false,
        }
    }
}

impl ExperimentSpec {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let spec: Self = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        Ok(spec)
    }

    pub fn param_count(&self) -> usize {
        parameter_count(&self.layer_sizes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!("bad layer sizes {:?}", self.layer_sizes)));
        }
        if let Some(c) = &self.coalescer {
            if c.capacity_columns == 0 {
                return Err(Error::Config("coalesce_columns must be at least 1".into()));
            }
        }
        self.train.validate()?;
        self.swag.validate(self.param_count())?;
        self.backend.validate()?;
        self.compare.iter().try_for_each(BackendConfig::validate)
    }

    /// One single-backend spec per configured backend.
    /// One single-backend spec per backend. Repeated labels get a `#n` suffix.
    pub fn expand(&self) -> Vec<ExperimentSpec> {
        let mut seen: Vec<String> = Vec::new();
        std::iter::once(&self.backend)
            .chain(&self.compare)
            .enumerate()
            .map(|(i, b)| {
                let base = match (&self.label, i) {
                    (Some(l), 0) => l.clone(),
                    _ => b.label(),
                };
                let n = seen.iter().filter(|l| **l == base).count();
                seen.push(base.clone());
                ExperimentSpec {
                    backend: b.clone(),
                    compare: Vec::new(),
                    label: match (n, i) {
                        (0, 0) => self.label.clone(),
                        (0, _) => None,
                        _ => Some(format!("{base}#{}", n + 1)),
                    },
                    ..self.clone()
                }
            })
            .collect()
    }

    pub fn backend_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.backend.label())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let classes = *self.layer_sizes.last().unwrap_or(&1);
        self.data.load(self.layer_sizes[0], classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Alloc,
    Train,
    PosteriorUpdate,
    Flush,
    Sample,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Alloc,
        Phase::Train,
        Phase::PosteriorUpdate,
        Phase::Flush,
        Phase::Sample,
    ];
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::Format(format!("unknown phase `{s}`")))
    }
}

/// Timing of one phase. Allocation is recorded as epoch 0, training epochs
/// count from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub backend: String,
    pub repetition: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub wall_seconds: f64,
    pub simulated_seconds: f64,
    pub stats: BackendStats,
    /// Set when training diverged in this phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged_at_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub backend: String,
    pub kind: BackendKind,
    pub params: u64,
    pub rank: u64,
    pub element_width: u64,
    /// Bytes of the deviation matrix at the final rank.
    pub posterior_bytes: u64,
    pub records: Vec<TimingRecord>,
    /// SHA-256 of the final posterior checkpoint of each completed repetition.
    pub checkpoint_digests: Vec<Option<String>>,
}

impl ExperimentResult {
    pub fn diverged(&self) -> Option<&TimingRecord> {
        self.records.iter().find(|r| r.diverged_at_step.is_some())
    }
}

struct PhaseTimer<'a> {
    backend: &'a dyn StorageBackend,
    started: Instant,
    before: BackendStats,
}

impl<'a> PhaseTimer<'a> {
    fn start(backend: &'a dyn StorageBackend) -> Self {
        Self {
            backend,
            started: Instant::now(),
            before: backend.stats(),
        }
    }

    fn finish(self) -> (f64, BackendStats) {
        let wall = self.started.elapsed().as_secs_f64();
        (wall, self.backend.stats().since(&self.before))
    }
}

fn record(
    label: &str,
    repetition: usize,
    epoch: usize,
    phase: Phase,
    wall: f64,
    stats: BackendStats,
) -> TimingRecord {
    TimingRecord {
        backend: label.to_owned(),
        repetition,
        epoch,
        phase,
        wall_seconds: wall,
        simulated_seconds: stats.simulated_time(),
        stats,
        diverged_at_step: None,
    }
}

/// Runs every repetition of a single-backend spec on `data`.
///
/// The model trajectory depends only on the seeds, so every backend sees the
/// same iterates and produces the same posterior.
pub fn run_experiment_on(spec: &ExperimentSpec, data: &Dataset) -> Result<ExperimentResult> {
    spec.validate()?;
    let label = spec.backend_label();
    let params = spec.param_count();
    let mut records = Vec::new();
    let mut digests = Vec::new();
    let mut rank = 0;
    for rep in 0..spec.repetitions {
        let ctx = || format!("backend {label}, repetition {rep}");
        let outcome = run_repetition(spec, &label, rep, data, &mut records).map_err(|e| e.context(ctx()))?;
        match outcome {
            Some((digest, k)) => {
                digests.push(Some(digest));
                rank = k;
            }
            None => digests.push(None),
        }
    }
    let width = spec.swag.element_width.bytes() as u64;
    Ok(ExperimentResult {
        backend: label,
        kind: spec.backend.kind(),
        params: params as u64,
        rank: rank as u64,
        element_width: width,
        posterior_bytes: if rank == 0 {
            0
        } else {
            estimate_size(params as u64, rank as u64, width)?
        },
        records,
        checkpoint_digests: digests,
    })
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let data = spec.load_dataset()?;
    run_experiment_on(spec, &data)
}

/// Runs `spec.backend` followed by every `compare` backend on one dataset.
pub fn run_all(spec: &ExperimentSpec) -> Result<Vec<ExperimentResult>> {
    spec.validate()?;
    let data = spec.load_dataset()?;
    spec.expand().iter().map(|s| run_experiment_on(s, &data)).collect()
}

/// Writes the training inputs to `backend` as one f64 column per example.
fn stage(backend: &dyn StorageBackend, data: &Dataset, rep: usize) -> Result<ArrayHandle> {
    let handle = backend.create_array(
        &format!("dataset-{rep}"),
        data.features(),
        data.len(),
        ElementWidth::Eight,
        Layout::ColMajor,
    )?;
    let inputs = data.inputs().as_standard_layout().into_owned();
    let bytes = ElementWidth::Eight.encode(inputs.as_slice().unwrap_or_default());
    backend.write_region(&handle, 0..data.features(), 0..data.len(), &bytes)?;
    Ok(handle)
}

/// Returns the checkpoint digest and final rank, or `None` when training
/// diverged (the divergence is marked on the Train record).
fn run_repetition(
    spec: &ExperimentSpec,
    label: &str,
    rep: usize,
    data: &Dataset,
    records: &mut Vec<TimingRecord>,
) -> Result<Option<(String, usize)>> {
    let params = spec.param_count();
    let started = Instant::now();
    let backend = spec.backend.build()?;
    let placement = DeviationPlacement::new(backend.clone(), format!("deviations-{rep}"))
        .with_layout(spec.layout)
        .with_coalescer(spec.coalescer);
    let mut state = SwagState::new(spec.swag, params, &placement)?;
    let staged = if spec.stage_dataset {
        Some(stage(backend.as_ref(), data, rep)?)
    } else {
        None
    };
    records.push(record(
        label,
        rep,
        0,
        Phase::Alloc,
        started.elapsed().as_secs_f64(),
        backend.stats(),
    ));

    let mut model = MlpModel::new(&spec.layer_sizes, spec.model_seed)?;
    let mut trainer = SgdTrainer::new(spec.train)?;
    for epoch in 1..=spec.train.epochs {
        let before = backend.stats();
        let epoch_start = Instant::now();
        let mut update_wall = 0.0;
        let mut fetch_stats = BackendStats::default();
        let mut column = vec![0u8; data.features() * 8];
        let outcome = trainer.sgd_epoch_with(
            &mut model,
            data,
            |indices| {
                let Some(handle) = &staged else { return Ok(()) };
                let at = backend.stats();
                for &i in indices {
                    backend.read_column(handle, i, &mut column)?;
                }
                fetch_stats += backend.stats().since(&at);
                Ok(())
            },
            |theta| {
                let t = Instant::now();
                state.update(theta)?;
                update_wall += t.elapsed().as_secs_f64();
                Ok(())
            },
        );
        let epoch_wall = epoch_start.elapsed().as_secs_f64();
        let update_stats = backend.stats().since(&before).since(&fetch_stats);
        let mut train = record(
            label,
            rep,
            epoch,
            Phase::Train,
            (epoch_wall - update_wall).max(0.0),
            fetch_stats,
        );
        if let Err(Error::Divergence { step, .. }) = outcome {
            train.diverged_at_step = Some(step);
            records.push(train);
            return Ok(None);
        }
        outcome?;
        records.push(train);
        records.push(record(label, rep, epoch, Phase::PosteriorUpdate, update_wall, update_stats));

        let timer = PhaseTimer::start(backend.as_ref());
        state.flush()?;
        let (wall, stats) = timer.finish();
        records.push(record(label, rep, epoch, Phase::Flush, wall, stats));

        let timer = PhaseTimer::start(backend.as_ref());
        if spec.samples_per_epoch > 0 && state.accepted() > 0 {
            let sampler = state.sampler()?;
            for s in 0..spec.samples_per_epoch {
                sampler.draw(s as u64)?;
            }
        }
        let (wall, stats) = timer.finish();
        records.push(record(label, rep, epoch, Phase::Sample, wall, stats));
    }
    state.flush()?;
    let digest = hex::encode(Sha256::digest(state.checkpoint_bytes()?));
    Ok(Some((digest, state.rank())))
}
