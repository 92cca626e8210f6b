use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use super::config::{InMemoryConfig, LatencyParams, PmemConfig};
use super::stats::{seconds_to_picos, StatsCell};
use super::{
    check_handle, check_new_array, next_backend_id, region, ArrayHandle, BackendKind,
    BackendStats, ElementWidth, Layout, StorageBackend,
};
use crate::error::{Error, Result};

/// Heap-resident arrays with an optional simulated clock.
///
/// Serves both plain DRAM (multiplier 1, no allocation penalty) and simulated
/// persistent memory (multiplier λ, per-allocation penalty). With a clock,
/// DRAM charges the reference cost of the same operations, flushes included,
/// so a λ-tier trace costs exactly λ times as much apart from allocation.
#[derive(Debug)]
pub struct RamBackend {
    id: u64,
    kind: BackendKind,
    clock: Option<Clock>,
    capacity: Option<u64>,
    arrays: RwLock<Registry>,
    stats: StatsCell,
}

#[derive(Debug, Clone, Copy)]
struct Clock {
    multiplier: f64,
    alloc_penalty: f64,
    latency: LatencyParams,
}

#[derive(Debug, Default)]
struct Registry {
    used_bytes: u64,
    arrays: HashMap<String, Arc<RamArray>>,
}

#[derive(Debug)]
struct RamArray {
    handle: ArrayHandle,
    data: RwLock<Vec<u8>>,
}

impl RamBackend {
    pub fn in_memory(config: &InMemoryConfig) -> Self {
        let clock = config.account_latency.then_some(Clock {
            multiplier: 1.0,
            alloc_penalty: 0.0,
            latency: config.latency,
        });
        Self::new(BackendKind::InMemory, clock, config.capacity_bytes)
    }

    pub fn simulated_pmem(config: &PmemConfig) -> Self {
        let clock = Clock {
            multiplier: config.latency_multiplier,
            alloc_penalty: config.alloc_penalty,
            latency: config.latency,
        };
        Self::new(BackendKind::SimulatedPMem, Some(clock), config.capacity_bytes)
    }

    fn new(kind: BackendKind, clock: Option<Clock>, capacity: Option<u64>) -> Self {
        Self {
            id: next_backend_id(),
            kind,
            clock,
            capacity,
            arrays: RwLock::default(),
            stats: StatsCell::default(),
        }
    }

    fn array(&self, handle: &ArrayHandle) -> Result<Arc<RamArray>> {
        check_handle(self.id, handle)?;
        let registry = self.arrays.read().unwrap_or_else(|e| e.into_inner());
        registry
            .arrays
            .get(handle.name())
            .cloned()
            .ok_or_else(|| Error::UnknownArray(handle.name().to_owned()))
    }

    fn transfer_picos(&self, extents: &[region::Extent], width: usize) -> u64 {
        match &self.clock {
            Some(c) => extents
                .iter()
                .map(|e| c.latency.transfer_picos(c.multiplier, e.len * width))
                .sum(),
            None => 0,
        }
    }
}

impl StorageBackend for RamBackend {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> BackendKind {
        self.kind
    }

    fn create_array(
        &self,
        name: &str,
        rows: usize,
        cols: usize,
        width: ElementWidth,
        layout: Layout,
    ) -> Result<ArrayHandle> {
        check_new_array(name, rows, cols)?;
        let started = Instant::now();
        let handle = ArrayHandle::new(name, rows, cols, width, layout, self.id);
        let size = handle.size_bytes();
        let mut registry = self.arrays.write().unwrap_or_else(|e| e.into_inner());
        if registry.arrays.contains_key(name) {
            return Err(Error::DuplicateArray(name.to_owned()));
        }
        if let Some(cap) = self.capacity {
            let available = cap.saturating_sub(registry.used_bytes);
            if size > available {
                return Err(Error::InsufficientCapacity {
                    needed: size,
                    available,
                });
            }
        }
        let len = usize::try_from(size)
            .map_err(|_| Error::Range(format!("array `{name}` of {size} bytes")))?;
        let array = RamArray {
            handle: handle.clone(),
            data: RwLock::new(vec![0u8; len]),
        };
        registry.used_bytes += size;
        registry.arrays.insert(name.to_owned(), Arc::new(array));
        drop(registry);

        let wall = started.elapsed().as_secs_f64();
        let penalty = self
            .clock
            .map(|c| seconds_to_picos(c.alloc_penalty))
            .unwrap_or(0);
        self.stats.update(|s| {
            s.allocations += 1;
            s.alloc_wall_time += wall;
            s.simulated_picos += penalty;
        });
        Ok(handle)
    }

    fn read_region(
        &self,
        handle: &ArrayHandle,
        rows: Range<usize>,
        cols: Range<usize>,
        out: &mut [u8],
    ) -> Result<()> {
        let array = self.array(handle)?;
        let h = &array.handle;
        region::validate(h, &rows, &cols, out.len())?;
        let extents = region::plan(h, &rows, &cols);
        {
            let data = array.data.read().unwrap_or_else(|e| e.into_inner());
            region::read_from(h, &rows, &cols, &extents, &data, out);
        }
        let cost = self.transfer_picos(&extents, h.element_width().bytes());
        self.stats.update(|s| {
            s.read_ops += 1;
            s.bytes_read += out.len() as u64;
            s.transfers += extents.len() as u64;
            s.simulated_picos += cost;
        });
        Ok(())
    }

    fn write_region(
        &self,
        handle: &ArrayHandle,
        rows: Range<usize>,
        cols: Range<usize>,
        data: &[u8],
    ) -> Result<()> {
        let array = self.array(handle)?;
        let h = &array.handle;
        region::validate(h, &rows, &cols, data.len())?;
        let extents = region::plan(h, &rows, &cols);
        {
            let mut image = array.data.write().unwrap_or_else(|e| e.into_inner());
            region::write_into(h, &rows, &cols, &extents, data, &mut image);
        }
        let cost = self.transfer_picos(&extents, h.element_width().bytes());
        self.stats.update(|s| {
            s.write_ops += 1;
            s.bytes_written += data.len() as u64;
            s.transfers += extents.len() as u64;
            s.simulated_picos += cost;
        });
        Ok(())
    }

    fn flush(&self, handle: &ArrayHandle) -> Result<()> {
        self.array(handle)?;
        let cost = match &self.clock {
            Some(c) => c.latency.flush_picos(c.multiplier),
            _ => 0,
        };
        self.stats.update(|s| {
            s.flushes += 1;
            s.simulated_picos += cost;
        });
        Ok(())
    }

    fn stats(&self) -> BackendStats {
        self.stats.snapshot()
    }

    fn reset_stats(&self) {
        self.stats.reset();
    }
}
