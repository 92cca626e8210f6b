//! Column write buffering in fast memory.
//!
//! Pending columns are held in DRAM and pushed to the backing array in one
//! pass: the buffered column indices are sorted and every maximal run of
//! adjacent columns becomes a single region write. Buffered data is volatile
//! until flushed.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::posterior::ColumnStore;
use crate::store::{ArrayHandle, StorageBackend};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlushPolicy {
    /// Flush as soon as the buffer holds `capacity_columns` columns.
    #[default]
    WhenFull,
    /// Only flush on request.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoalescerConfig {
    #[serde(alias = "coalesce_columns")]
    pub capacity_columns: usize,
    #[serde(default)]
    pub flush_policy: FlushPolicy,
}

impl CoalescerConfig {
    pub fn when_full(capacity_columns: usize) -> Self {
        Self {
            capacity_columns,
            flush_policy: FlushPolicy::WhenFull,
        }
    }
}

#[derive(Debug)]
pub struct WriteCoalescer {
    backend: Arc<dyn StorageBackend>,
    handle: ArrayHandle,
    config: CoalescerConfig,
    pending: BTreeMap<usize, Vec<u8>>,
}

impl WriteCoalescer {
    pub fn new(
        backend: Arc<dyn StorageBackend>,
        handle: ArrayHandle,
        config: CoalescerConfig,
    ) -> Result<Self> {
        if config.capacity_columns == 0 {
            return Err(Error::Config("coalescer capacity must be at least 1 column".into()));
        }
        Ok(Self {
            backend,
            handle,
            config,
            pending: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &CoalescerConfig {
        &self.config
    }

    pub fn buffered(&self) -> usize {
        self.pending.len()
    }

    pub fn buffered_write_column(&mut self, j: usize, data: &[u8]) -> Result<()> {
        if j >= self.handle.cols() {
            return Err(Error::OutOfBounds(format!(
                "column {j} of `{}` with {} columns",
                self.handle.name(),
                self.handle.cols()
            )));
        }
        check_len(self.handle.column_bytes(), data.len())?;
        self.pending.insert(j, data.to_vec());
        if self.config.flush_policy == FlushPolicy::WhenFull
            && self.pending.len() >= self.config.capacity_columns
        {
            self.flush_now()?;
        }
        Ok(())
    }

    /// Buffered contents of column `j` if present, else the backing contents.
    pub fn read_through(&self, j: usize, out: &mut [u8]) -> Result<()> {
        match self.pending.get(&j) {
            Some(data) => {
                check_len(data.len(), out.len())?;
                out.copy_from_slice(data);
                Ok(())
            }
            None => self.backend.read_column(&self.handle, j, out),
        }
    }

    /// Writes every buffered column, one region write per run of adjacent columns.
    pub fn flush_now(&mut self) -> Result<()> {
        let mut runs: Vec<(usize, usize, Vec<u8>)> = Vec::new();
        for (&j, data) in &self.pending {
            match runs.last_mut() {
                Some((_, end, buf)) if *end == j => {
                    buf.extend_from_slice(data);
                    *end += 1;
                }
                _ => runs.push((j, j + 1, data.clone())),
            }
        }
        for (start, end, buf) in runs {
            self.backend
                .write_region(&self.handle, 0..self.handle.rows(), start..end, &buf)?;
        }
        self.pending.clear();
        Ok(())
    }
}

impl ColumnStore for WriteCoalescer {
    fn handle(&self) -> &ArrayHandle {
        &self.handle
    }

    fn backend(&self) -> &Arc<dyn StorageBackend> {
        &self.backend
    }

    fn write_column(&mut self, j: usize, data: &[u8]) -> Result<()> {
        self.buffered_write_column(j, data)
    }

    fn read_column(&self, j: usize, out: &mut [u8]) -> Result<()> {
        self.read_through(j, out)
    }

    fn flush(&mut self) -> Result<()> {
        self.flush_now()?;
        self.backend.flush(&self.handle)
    }
}
