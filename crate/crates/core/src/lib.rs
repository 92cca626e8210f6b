//! Streaming SWAG posteriors kept on pluggable storage tiers.
//!
//! The posterior ([`posterior::SwagState`]) keeps its running moments in DRAM
//! and its deviation matrix on a [`store::StorageBackend`]: plain memory, a
//! memory-mapped file, simulated persistent memory, or a DRAM cache in front
//! of a slower tier. Simulated tiers keep a deterministic virtual clock so
//! that storage costs can be compared exactly.

pub mod coalesce;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod posterior;
pub mod store;
pub mod trainer;

pub use coalesce::{CoalescerConfig, FlushPolicy, WriteCoalescer};
pub use error::{Error, Result};
pub use eval::{bma_predict, evaluate, point_predict, EvalMetrics, PredictiveResult};
pub use experiment::{run_experiment, summarize, ExperimentSpec, Phase, TimingRecord};
pub use posterior::{estimate_size, DeviationPlacement, ParamVector, SwagConfig, SwagState};
pub use store::{BackendConfig, BackendStats, ElementWidth, Layout, StorageBackend};
pub use trainer::{Dataset, MlpModel, SgdTrainer, TrainConfig};
