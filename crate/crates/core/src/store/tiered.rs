use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use super::config::{LatencyParams, TieredCacheConfig};
use super::lru::LruBlocks;
use super::stats::StatsCell;
use super::{
    check_handle, check_new_array, next_backend_id, region, ArrayHandle, BackendKind,
    BackendStats, ElementWidth, Layout, StorageBackend,
};
use crate::error::{Error, Result};

/// A DRAM-speed block cache transparently fronting a slower tier.
///
/// Array bytes live in the backing backend; the cache tracks which fixed-size
/// blocks of each array's physical byte image are resident. The cache is
/// write-allocate and write-back:
///
/// * every contiguous transfer costs DRAM time for its bytes;
/// * a miss fills the whole block from the backing tier;
/// * evicting a dirty block writes it back to the backing tier.
#[derive(Debug)]
pub struct TieredCacheBackend {
    id: u64,
    block_size: u64,
    backing: Arc<dyn StorageBackend>,
    backing_multiplier: f64,
    latency: LatencyParams,
    arrays: RwLock<HashMap<String, Entry>>,
    next_array: Mutex<u32>,
    cache: Mutex<LruBlocks<(u32, u64)>>,
    stats: StatsCell,
}

#[derive(Debug, Clone)]
struct Entry {
    index: u32,
    backing: ArrayHandle,
}

#[derive(Default)]
struct Charge {
    picos: u64,
    hits: u64,
    misses: u64,
    evictions: u64,
}

impl TieredCacheBackend {
    pub fn new(config: &TieredCacheConfig) -> Result<Self> {
        let blocks = (config.cache_capacity_bytes / config.block_size_bytes.max(1)) as usize;
        if blocks == 0 {
            return Err(Error::Config("cache must hold at least one block".into()));
        }
        Ok(Self {
            id: next_backend_id(),
            block_size: config.block_size_bytes,
            backing: config.backing.build()?,
            backing_multiplier: config.backing.latency_multiplier(),
            latency: config.latency,
            arrays: RwLock::default(),
            next_array: Mutex::new(0),
            cache: Mutex::new(LruBlocks::new(blocks)),
            stats: StatsCell::default(),
        })
    }

    pub fn capacity_blocks(&self) -> usize {
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).capacity()
    }

    pub fn block_size(&self) -> u64 {
        self.block_size
    }

    /// Statistics of the backing tier, which sees every data transfer.
    pub fn backing_stats(&self) -> BackendStats {
        self.backing.stats()
    }

    fn entry(&self, handle: &ArrayHandle) -> Result<Entry> {
        check_handle(self.id, handle)?;
        self.arrays
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(handle.name())
            .cloned()
            .ok_or_else(|| Error::UnknownArray(handle.name().to_owned()))
    }

    fn block_picos(&self) -> u64 {
        self.latency
            .transfer_picos(self.backing_multiplier, self.block_size as usize)
    }

    /// Runs the cache model over the blocks a region access touches.
    fn simulate(
        &self,
        index: u32,
        handle: &ArrayHandle,
        rows: &Range<usize>,
        cols: &Range<usize>,
        write: bool,
    ) -> (usize, Charge) {
        let w = handle.element_width().bytes();
        let extents = region::plan(handle, rows, cols);
        let block_cost = self.block_picos();
        let mut charge = Charge::default();
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        for e in &extents {
            let bytes = e.byte_range(w);
            charge.picos += self.latency.transfer_picos(1.0, bytes.len());
            let first = bytes.start as u64 / self.block_size;
            let last = (bytes.end as u64 - 1) / self.block_size;
            for block in first..=last {
                let access = cache.access((index, block), write);
                if access.hit {
                    charge.hits += 1;
                    continue;
                }
                charge.misses += 1;
                charge.picos += block_cost;
                if let Some((_, dirty)) = access.evicted {
                    charge.evictions += 1;
                    if dirty {
                        charge.picos += block_cost;
                    }
                }
            }
        }
        (extents.len(), charge)
    }
}

impl StorageBackend for TieredCacheBackend {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> BackendKind {
        BackendKind::TieredCache
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
        let mut arrays = self.arrays.write().unwrap_or_else(|e| e.into_inner());
        if arrays.contains_key(name) {
            return Err(Error::DuplicateArray(name.to_owned()));
        }
        let backing_before = self.backing.stats().simulated_picos;
        let backing = self.backing.create_array(name, rows, cols, width, layout)?;
        let alloc_picos = self.backing.stats().simulated_picos - backing_before;
        let index = {
            let mut next = self.next_array.lock().unwrap_or_else(|e| e.into_inner());
            *next += 1;
            *next - 1
        };
        arrays.insert(name.to_owned(), Entry { index, backing });
        drop(arrays);

        let wall = started.elapsed().as_secs_f64();
        self.stats.update(|s| {
            s.allocations += 1;
            s.alloc_wall_time += wall;
            s.simulated_picos += alloc_picos;
        });
        Ok(ArrayHandle::new(name, rows, cols, width, layout, self.id))
    }

    fn read_region(
        &self,
        handle: &ArrayHandle,
        rows: Range<usize>,
        cols: Range<usize>,
        out: &mut [u8],
    ) -> Result<()> {
        let entry = self.entry(handle)?;
        region::validate(&entry.backing, &rows, &cols, out.len())?;
        self.backing
            .read_region(&entry.backing, rows.clone(), cols.clone(), out)?;
        let (transfers, c) = self.simulate(entry.index, &entry.backing, &rows, &cols, false);
        self.stats.update(|s| {
            s.read_ops += 1;
            s.bytes_read += out.len() as u64;
            s.transfers += transfers as u64;
            s.cache_hits += c.hits;
            s.cache_misses += c.misses;
            s.evictions += c.evictions;
            s.simulated_picos += c.picos;
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
        let entry = self.entry(handle)?;
        region::validate(&entry.backing, &rows, &cols, data.len())?;
        self.backing
            .write_region(&entry.backing, rows.clone(), cols.clone(), data)?;
        let (transfers, c) = self.simulate(entry.index, &entry.backing, &rows, &cols, true);
        self.stats.update(|s| {
            s.write_ops += 1;
            s.bytes_written += data.len() as u64;
            s.transfers += transfers as u64;
            s.cache_hits += c.hits;
            s.cache_misses += c.misses;
            s.evictions += c.evictions;
            s.simulated_picos += c.picos;
        });
        Ok(())
    }

    /// Writes back this array's dirty blocks, then flushes the backing tier.
    fn flush(&self, handle: &ArrayHandle) -> Result<()> {
        let entry = self.entry(handle)?;
        let written_back = self
            .cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clean(|(index, _)| *index == entry.index);
        self.backing.flush(&entry.backing)?;
        let picos = written_back as u64 * self.block_picos()
            + self.latency.flush_picos(self.backing_multiplier);
        self.stats.update(|s| {
            s.flushes += 1;
            s.simulated_picos += picos;
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
