use std::ops::AddAssign;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

const PICOS_PER_SECOND: f64 = 1e12;

/// Snapshot of a backend's access counters and clocks.
///
/// `simulated_picos` is the virtual clock in integer picoseconds so that it is
/// an exact, deterministic function of the operation trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendStats {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub read_ops: u64,
    pub write_ops: u64,
    /// Physically contiguous transfers; a strided access counts one per run.
    pub transfers: u64,
    pub flushes: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub evictions: u64,
    pub allocations: u64,
    pub alloc_wall_time: f64,
    pub simulated_picos: u64,
}

impl BackendStats {
    pub fn simulated_time(&self) -> f64 {
        self.simulated_picos as f64 / PICOS_PER_SECOND
    }

    /// Counter growth from `earlier` to `self`.
    pub fn since(&self, earlier: &BackendStats) -> BackendStats {
        BackendStats {
            bytes_read: self.bytes_read.saturating_sub(earlier.bytes_read),
            bytes_written: self.bytes_written.saturating_sub(earlier.bytes_written),
            read_ops: self.read_ops.saturating_sub(earlier.read_ops),
            write_ops: self.write_ops.saturating_sub(earlier.write_ops),
            transfers: self.transfers.saturating_sub(earlier.transfers),
            flushes: self.flushes.saturating_sub(earlier.flushes),
            cache_hits: self.cache_hits.saturating_sub(earlier.cache_hits),
            cache_misses: self.cache_misses.saturating_sub(earlier.cache_misses),
            evictions: self.evictions.saturating_sub(earlier.evictions),
            allocations: self.allocations.saturating_sub(earlier.allocations),
            alloc_wall_time: (self.alloc_wall_time - earlier.alloc_wall_time).max(0.0),
            simulated_picos: self.simulated_picos.saturating_sub(earlier.simulated_picos),
        }
    }

    pub fn miss_rate(&self) -> f64 {
        let total = self.cache_hits + self.cache_misses;
        if total == 0 {
            0.0
        } else {
            self.cache_misses as f64 / total as f64
        }
    }
}

impl AddAssign for BackendStats {
    fn add_assign(&mut self, o: BackendStats) {
        self.bytes_read += o.bytes_read;
        self.bytes_written += o.bytes_written;
        self.read_ops += o.read_ops;
        self.write_ops += o.write_ops;
        self.transfers += o.transfers;
        self.flushes += o.flushes;
        self.cache_hits += o.cache_hits;
        self.cache_misses += o.cache_misses;
        self.evictions += o.evictions;
        self.allocations += o.allocations;
        self.alloc_wall_time += o.alloc_wall_time;
        self.simulated_picos += o.simulated_picos;
    }
}

pub(crate) fn seconds_to_picos(seconds: f64) -> u64 {
    (seconds * PICOS_PER_SECOND).round().max(0.0) as u64
}

/// Stats guarded so each operation's update lands atomically.
#[derive(Debug, Default)]
pub(crate) struct StatsCell(Mutex<BackendStats>);

impl StatsCell {
    pub fn update(&self, f: impl FnOnce(&mut BackendStats)) {
        let mut guard = self.0.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut guard);
    }

    pub fn snapshot(&self) -> BackendStats {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn reset(&self) {
        self.update(|s| {
            *s = BackendStats {
                simulated_picos: s.simulated_picos,
                ..BackendStats::default()
            }
        });
    }
}
