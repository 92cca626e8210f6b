use std::fmt;
use std::sync::Arc;

use crate::coalesce::{CoalescerConfig, WriteCoalescer};
use crate::error::Result;
use crate::store::{ArrayHandle, ElementWidth, Layout, StorageBackend};

/// Column-granular access to the deviation matrix.
pub trait ColumnStore: Send + Sync + fmt::Debug {
    fn handle(&self) -> &ArrayHandle;

    fn backend(&self) -> &Arc<dyn StorageBackend>;

    fn write_column(&mut self, j: usize, data: &[u8]) -> Result<()>;

    /// Returns the latest written contents of column `j`.
    fn read_column(&self, j: usize, out: &mut [u8]) -> Result<()>;

    /// Pushes pending writes to the backing array and flushes it.
    fn flush(&mut self) -> Result<()>;
}

/// Writes go straight to the backend.
#[derive(Debug, Clone)]
pub struct DirectColumns {
    backend: Arc<dyn StorageBackend>,
    handle: ArrayHandle,
}

impl DirectColumns {
    pub fn new(backend: Arc<dyn StorageBackend>, handle: ArrayHandle) -> Self {
        Self { backend, handle }
    }
}

impl ColumnStore for DirectColumns {
    fn handle(&self) -> &ArrayHandle {
        &self.handle
    }

    fn backend(&self) -> &Arc<dyn StorageBackend> {
        &self.backend
    }

    fn write_column(&mut self, j: usize, data: &[u8]) -> Result<()> {
        self.backend.write_column(&self.handle, j, data)
    }

    fn read_column(&self, j: usize, out: &mut [u8]) -> Result<()> {
        self.backend.read_column(&self.handle, j, out)
    }

    fn flush(&mut self) -> Result<()> {
        self.backend.flush(&self.handle)
    }
}

/// Where a posterior keeps its deviation matrix.
#[derive(Debug, Clone)]
pub struct DeviationPlacement {
    pub backend: Arc<dyn StorageBackend>,
    pub name: String,
    pub layout: Layout,
    pub coalescer: Option<CoalescerConfig>,
}

impl DeviationPlacement {
    pub fn new(backend: Arc<dyn StorageBackend>, name: impl Into<String>) -> Self {
        Self {
            backend,
            name: name.into(),
            layout: Layout::ColMajor,
            coalescer: None,
        }
    }

    pub fn with_layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn with_coalescer(mut self, coalescer: Option<CoalescerConfig>) -> Self {
        self.coalescer = coalescer;
        self
    }

    /// Allocates a `rows x cols` array and wraps it in the configured column store.
    pub(crate) fn allocate(
        &self,
        rows: usize,
        cols: usize,
        width: ElementWidth,
    ) -> Result<Box<dyn ColumnStore>> {
        let handle = self
            .backend
            .create_array(&self.name, rows, cols, width, self.layout)?;
        Ok(match &self.coalescer {
            Some(cfg) => Box::new(WriteCoalescer::new(self.backend.clone(), handle, *cfg)?),
            None => Box::new(DirectColumns::new(self.backend.clone(), handle)),
        })
    }
}
