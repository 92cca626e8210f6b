//! Pluggable storage tiers for large 2-D arrays.
//!
//! Every backend stores named, zero-initialised `rows x cols` arrays of
//! fixed-width little-endian reals in a declared [`Layout`]. Backends differ
//! only in cost accounting, statistics and durability: the same sequence of
//! operations yields the same bytes everywhere.
//!
//! Region buffers passed to [`StorageBackend::read_region`] and
//! [`StorageBackend::write_region`] are always ordered column by column
//! (column-major within the region), independent of the physical layout.

mod config;
mod lru;
mod mapped;
mod ram;
mod region;
mod stats;
mod tiered;

use std::fmt;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{
    BackendConfig, InMemoryConfig, LatencyParams, MappedFileConfig, PmemConfig, PmemMode,
    TieredCacheConfig,
};
pub use lru::{Access, LruBlocks};
pub use mapped::{read_array_file, ArrayFileHeader, MappedFileBackend, ARRAY_FILE_HEADER_LEN};
pub use ram::RamBackend;
pub use stats::BackendStats;
pub use tiered::TieredCacheBackend;

/// Physical ordering of an array; decides whether a row or a column is contiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Layout {
    RowMajor,
    #[default]
    ColMajor,
}

impl Layout {
    pub fn code(self) -> u8 {
        match self {
            Layout::RowMajor => 0,
            Layout::ColMajor => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Layout::RowMajor),
            1 => Ok(Layout::ColMajor),
            other => Err(Error::Format(format!("unknown layout code {other}"))),
        }
    }
}

/// Bytes per stored element. Four-byte elements are `f32`, eight-byte are `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(try_from = "u32", into = "u32")]
pub enum ElementWidth {
    #[default]
    Four,
    Eight,
}

impl ElementWidth {
    pub fn bytes(self) -> usize {
        match self {
            ElementWidth::Four => 4,
            ElementWidth::Eight => 8,
        }
    }

    /// Appends the little-endian encoding of `values` to `out`.
    pub fn encode_into(self, values: &[f64], out: &mut Vec<u8>) {
        out.reserve(values.len() * self.bytes());
        match self {
            ElementWidth::Four => {
                for v in values {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            ElementWidth::Eight => {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    pub fn encode(self, values: &[f64]) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(values, &mut out);
        out
    }

    /// Decodes `bytes` into `out`; `bytes.len()` must be `out.len() * width`.
    pub fn decode_into(self, bytes: &[u8], out: &mut [f64]) {
        debug_assert_eq!(bytes.len(), out.len() * self.bytes());
        match self {
            ElementWidth::Four => {
                for (chunk, o) in bytes.chunks_exact(4).zip(out.iter_mut()) {
                    *o = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
                }
            }
            ElementWidth::Eight => {
                for (chunk, o) in bytes.chunks_exact(8).zip(out.iter_mut()) {
                    *o = f64::from_le_bytes(chunk.try_into().unwrap());
                }
            }
        }
    }

    pub fn decode(self, bytes: &[u8]) -> Vec<f64> {
        let mut out = vec![0.0; bytes.len() / self.bytes()];
        self.decode_into(bytes, &mut out);
        out
    }

    /// Rounds `v` to the precision this width stores.
    pub fn quantize(self, v: f64) -> f64 {
        match self {
            ElementWidth::Four => v as f32 as f64,
            ElementWidth::Eight => v,
        }
    }
}

impl TryFrom<u32> for ElementWidth {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        match value {
            4 => Ok(ElementWidth::Four),
            8 => Ok(ElementWidth::Eight),
            other => Err(Error::Config(format!(
                "element width must be 4 or 8 bytes, got {other}"
            ))),
        }
    }
}

impl From<ElementWidth> for u32 {
    fn from(w: ElementWidth) -> u32 {
        w.bytes() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendKind {
    InMemory,
    MappedFile,
    SimulatedPMem,
    TieredCache,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BackendKind::InMemory => "InMemory",
            BackendKind::MappedFile => "MappedFile",
            BackendKind::SimulatedPMem => "SimulatedPMem",
            BackendKind::TieredCache => "TieredCache",
        };
        f.write_str(s)
    }
}

/// A named array living on one backend.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArrayHandle {
    name: String,
    rows: usize,
    cols: usize,
    width: ElementWidth,
    layout: Layout,
    backend_id: u64,
}

impl ArrayHandle {
    pub(crate) fn new(
        name: &str,
        rows: usize,
        cols: usize,
        width: ElementWidth,
        layout: Layout,
        backend_id: u64,
    ) -> Self {
        Self {
            name: name.to_owned(),
            rows,
            cols,
            width,
            layout,
            backend_id,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn element_width(&self) -> ElementWidth {
        self.width
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn backend_id(&self) -> u64 {
        self.backend_id
    }

    pub fn size_bytes(&self) -> u64 {
        self.rows as u64 * self.cols as u64 * self.width.bytes() as u64
    }

    pub fn column_bytes(&self) -> usize {
        self.rows * self.width.bytes()
    }
}

/// A storage tier. Implementations are internally synchronised: reads may run
/// concurrently, writes to distinct arrays may proceed in parallel, and writes
/// to one array are serialised.
pub trait StorageBackend: Send + Sync + fmt::Debug {
    /// Process-unique identifier stamped into every handle this backend issues.
    fn id(&self) -> u64;

    fn kind(&self) -> BackendKind;

    /// Creates a zero-initialised array.
    fn create_array(
        &self,
        name: &str,
        rows: usize,
        cols: usize,
        width: ElementWidth,
        layout: Layout,
    ) -> Result<ArrayHandle>;

    /// Reads a region into `out`, ordered column by column.
    fn read_region(
        &self,
        handle: &ArrayHandle,
        rows: Range<usize>,
        cols: Range<usize>,
        out: &mut [u8],
    ) -> Result<()>;

    /// Writes a region from `data`, ordered column by column.
    fn write_region(
        &self,
        handle: &ArrayHandle,
        rows: Range<usize>,
        cols: Range<usize>,
        data: &[u8],
    ) -> Result<()>;

    fn flush(&self, handle: &ArrayHandle) -> Result<()>;

    fn stats(&self) -> BackendStats;

    /// Zeroes all counters. The simulated clock keeps running.
    fn reset_stats(&self);

    fn write_column(&self, handle: &ArrayHandle, j: usize, data: &[u8]) -> Result<()> {
        check_column(handle, j)?;
        self.write_region(handle, 0..handle.rows(), j..j + 1, data)
    }

    fn read_column(&self, handle: &ArrayHandle, j: usize, out: &mut [u8]) -> Result<()> {
        check_column(handle, j)?;
        self.read_region(handle, 0..handle.rows(), j..j + 1, out)
    }
}

/// Encodes `values` at the array's width and writes them as column `j`.
pub fn write_column_f64(
    backend: &dyn StorageBackend,
    handle: &ArrayHandle,
    j: usize,
    values: &[f64],
) -> Result<()> {
    crate::error::check_len(handle.rows(), values.len())?;
    let bytes = handle.element_width().encode(values);
    backend.write_column(handle, j, &bytes)
}

pub fn read_column_f64(
    backend: &dyn StorageBackend,
    handle: &ArrayHandle,
    j: usize,
) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; handle.column_bytes()];
    backend.read_column(handle, j, &mut bytes)?;
    Ok(handle.element_width().decode(&bytes))
}

fn check_column(handle: &ArrayHandle, j: usize) -> Result<()> {
    if j >= handle.cols() {
        return Err(Error::OutOfBounds(format!(
            "column {j} of `{}` with {} columns",
            handle.name(),
            handle.cols()
        )));
    }
    Ok(())
}

static NEXT_BACKEND_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_backend_id() -> u64 {
    NEXT_BACKEND_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) fn check_new_array(name: &str, rows: usize, cols: usize) -> Result<()> {
    if name.is_empty() || name.contains(['/', '\\', '\0']) || name == "." || name == ".." {
        return Err(Error::Config(format!("invalid array name `{name}`")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!(
            "array `{name}` must have nonzero dimensions, got {rows}x{cols}"
        )));
    }
    Ok(())
}

pub(crate) fn check_handle(backend_id: u64, handle: &ArrayHandle) -> Result<()> {
    if handle.backend_id() != backend_id {
        return Err(Error::UnknownArray(handle.name().to_owned()));
    }
    Ok(())
}
