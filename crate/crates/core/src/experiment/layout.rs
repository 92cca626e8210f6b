use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{BackendConfig, ElementWidth, Layout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRun {
    pub layout: Layout,
    pub column_writes: u64,
    pub transfers: u64,
    pub transfers_per_write: f64,
    pub bytes_written: u64,
    pub wall_seconds: f64,
    pub simulated_seconds: f64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub evictions: u64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub backend: String,
    pub rows: usize,
    pub cols: usize,
    pub passes: usize,
    pub row_major: LayoutRun,
    pub col_major: LayoutRun,
}

fn run(rows: usize, cols: usize, passes: usize, backend: &BackendConfig, layout: Layout) -> Result<LayoutRun> {
    let store = backend.build()?;
    let handle = store.create_array("layout", rows, cols, ElementWidth::Four, layout)?;
    let before = store.stats();
    let started = Instant::now();
    let mut column = Vec::with_capacity(rows);
    for pass in 0..passes {
        for j in 0..cols {
            column.clear();
            column.extend((0..rows).map(|i| (pass * cols + j) as f64 + i as f64 * 1e-3));
            crate::store::write_column_f64(store.as_ref(), &handle, j, &column)?;
        }
    }
    let wall = started.elapsed().as_secs_f64();
    let s = store.stats().since(&before);
    let writes = (passes * cols) as u64;
    Ok(LayoutRun {
        layout,
        column_writes: writes,
        transfers: s.transfers,
        transfers_per_write: s.transfers as f64 / writes as f64,
        bytes_written: s.bytes_written,
        wall_seconds: wall,
        simulated_seconds: s.simulated_time(),
        cache_hits: s.cache_hits,
        cache_misses: s.cache_misses,
        evictions: s.evictions,
        miss_rate: s.miss_rate(),
    })
}

/// Writes every column of a `rows x cols` array `passes` times under each
/// layout on a fresh backend, and compares the cost.
pub fn layout_pathology(
    rows: usize,
    cols: usize,
    backend: &BackendConfig,
    passes: usize,
) -> Result<LayoutReport> {
    if rows == 0 || cols == 0 || passes == 0 {
        return Err(Error::Config(format!(
            "rows, cols and passes must be positive, got ({rows}, {cols}, {passes})"
        )));
    }
    Ok(LayoutReport {
        backend: backend.label(),
        rows,
        cols,
        passes,
        row_major: run(rows, cols, passes, backend, Layout::RowMajor)?,
        col_major: run(rows, cols, passes, backend, Layout::ColMajor)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::TieredCacheConfig;

    fn tiered(cache: u64, block: u64) -> BackendConfig {
        BackendConfig::TieredCache(TieredCacheConfig {
            cache_capacity_bytes: cache,
            block_size_bytes: block,
            ..TieredCacheConfig::default()
        })
    }

    #[test]
    fn transfers_per_column_write() {
        let r = layout_pathology(7, 5, &BackendConfig::default(), 2).unwrap();
        assert_eq!(r.col_major.transfers, 10);
        assert_eq!(r.row_major.transfers, 70);
        assert_eq!(r.row_major.transfers_per_write, 7.0);
        assert!(r.row_major.simulated_seconds > r.col_major.simulated_seconds);
    }

    #[test]
    fn row_major_misses_grow_linearly_below_one_column_span() {
        // 16 rows of 64 columns x 4 bytes: each row is exactly one 256-byte
        // block, so a row-major column touches 16 blocks. A 4-block cache
        // evicts every block before it is reused.
        let backend = tiered(4 * 256, 256);
        let one = layout_pathology(16, 64, &backend, 1).unwrap();
        let two = layout_pathology(16, 64, &backend, 2).unwrap();
        assert_eq!(one.row_major.cache_misses, 16 * 64);
        assert_eq!(two.row_major.cache_misses, 2 * 16 * 64);
        assert_eq!(one.row_major.cache_hits, 0);
        // Column-major columns are 64 bytes: four share a block.
        assert_eq!(one.col_major.cache_misses, 16);
    }

    #[test]
    fn tiny_array_in_one_block_shows_no_difference() {
        let r = layout_pathology(2, 3, &tiered(4096, 4096), 3).unwrap();
        assert_eq!(r.row_major.cache_misses, 1);
        assert_eq!(r.col_major.cache_misses, 1);
    }

    #[test]
    fn rejects_empty_dimensions() {
        assert!(layout_pathology(0, 3, &BackendConfig::default(), 1).is_err());
    }
}
