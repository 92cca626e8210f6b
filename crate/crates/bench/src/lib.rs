//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use pmswag_core::coalesce::CoalescerConfig;
use pmswag_core::posterior::{DeviationPlacement, SwagConfig, SwagState};
use pmswag_core::store::{BackendConfig, Layout, PmemConfig, StorageBackend, TieredCacheConfig};

/// Parameter count of the desk-scale 784-32-32-10 model.
pub const DESK_PARAMS: usize = 26_506;

pub fn backends() -> Vec<(&'static str, BackendConfig)> {
    vec![
        ("dram", BackendConfig::default()),
        (
            "pmem",
            BackendConfig::SimulatedPMem(PmemConfig {
                alloc_penalty: 0.0,
                ..PmemConfig::default()
            }),
        ),
        ("mmap", "mmap".parse().expect("mmap spec")),
        (
            "tiered-1MiB",
            BackendConfig::TieredCache(TieredCacheConfig {
                cache_capacity_bytes: 1 << 20,
                ..TieredCacheConfig::default()
            }),
        ),
    ]
}

/// Deterministic pseudo-iterate `t` of dimension `dim`.
pub fn iterate(dim: usize, t: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| ((i * 31 + t * 17) % 1000) as f64 * 1e-3 - 0.5)
        .collect()
}

pub fn state(
    backend: Arc<dyn StorageBackend>,
    dim: usize,
    max_columns: usize,
    layout: Layout,
    coalescer: Option<CoalescerConfig>,
) -> SwagState {
    let config = SwagConfig {
        max_columns,
        ..SwagConfig::default()
    };
    let placement = DeviationPlacement::new(backend, "bench")
        .with_layout(layout)
        .with_coalescer(coalescer);
    SwagState::new(config, dim, &placement).expect("bench state")
}

/// A state that has absorbed `updates` iterates.
pub fn filled_state(dim: usize, max_columns: usize, updates: usize) -> SwagState {
    let mut s = state(
        BackendConfig::default().build().expect("dram"),
        dim,
        max_columns,
        Layout::ColMajor,
        None,
    );
    for t in 0..updates {
        s.update(&iterate(dim, t)).expect("update");
    }
    s
}
