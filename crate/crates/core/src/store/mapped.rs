//! Memory-mapped file arrays.
//!
//! Each array is stored as `<dir>/<name>.arr`: a 64-byte little-endian header
//! followed by the raw element bytes in the declared layout.
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `TSTR`                   |
//! | 4      | 2    | version (u16)                  |
//! | 6      | 2    | reserved, zero                 |
//! | 8      | 8    | rows (u64)                     |
//! | 16     | 8    | cols (u64)                     |
//! | 24     | 4    | element width in bytes (u32)   |
//! | 28     | 1    | layout code (0 row, 1 column)  |
//! | 29     | 35   | reserved, zero                 |

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use memmap2::{MmapMut, MmapOptions};
use tempfile::TempDir;

use super::config::MappedFileConfig;
use super::stats::StatsCell;
use super::{
    check_handle, check_new_array, next_backend_id, region, ArrayHandle, BackendKind,
    BackendStats, ElementWidth, Layout, StorageBackend,
};
use crate::error::{Error, Result};

pub const ARRAY_FILE_HEADER_LEN: usize = 64;
const ARRAY_FILE_MAGIC: &[u8; 4] = b"TSTR";
const ARRAY_FILE_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayFileHeader {
    pub version: u16,
    pub rows: u64,
    pub cols: u64,
    pub width: ElementWidth,
    pub layout: Layout,
}

impl ArrayFileHeader {
    pub fn encode(&self) -> [u8; ARRAY_FILE_HEADER_LEN] {
        let mut buf = [0u8; ARRAY_FILE_HEADER_LEN];
        buf[0..4].copy_from_slice(ARRAY_FILE_MAGIC);
        buf[4..6].copy_from_slice(&self.version.to_le_bytes());
        buf[8..16].copy_from_slice(&self.rows.to_le_bytes());
        buf[16..24].copy_from_slice(&self.cols.to_le_bytes());
        buf[24..28].copy_from_slice(&(self.width.bytes() as u32).to_le_bytes());
        buf[28] = self.layout.code();
        buf
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        if buf.len() < ARRAY_FILE_HEADER_LEN {
            return Err(Error::Corrupt(format!(
                "array header needs {ARRAY_FILE_HEADER_LEN} bytes, got {}",
                buf.len()
            )));
        }
        if &buf[0..4] != ARRAY_FILE_MAGIC {
            return Err(Error::Format("bad array file magic".into()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != ARRAY_FILE_VERSION {
            return Err(Error::Format(format!("unsupported array file version {version}")));
        }
        let width = u32::from_le_bytes(buf[24..28].try_into().unwrap());
        Ok(Self {
            version,
            rows: u64::from_le_bytes(buf[8..16].try_into().unwrap()),
            cols: u64::from_le_bytes(buf[16..24].try_into().unwrap()),
            width: ElementWidth::try_from(width).map_err(|_| {
                Error::Format(format!("unsupported element width {width}"))
            })?,
            layout: Layout::from_code(buf[28])?,
        })
    }
}

/// Reads an array file without going through a backend.
pub fn read_array_file(path: &Path) -> Result<(ArrayFileHeader, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::storage(path, e))?;
    let header = ArrayFileHeader::decode(&bytes)?;
    let expected = header.rows * header.cols * header.width.bytes() as u64;
    let payload = bytes[ARRAY_FILE_HEADER_LEN..].to_vec();
    if payload.len() as u64 != expected {
        return Err(Error::Corrupt(format!(
            "{} holds {} payload bytes, header declares {expected}",
            path.display(),
            payload.len()
        )));
    }
    Ok((header, payload))
}

#[derive(Debug)]
pub struct MappedFileBackend {
    id: u64,
    dir: PathBuf,
    _scratch: Option<TempDir>,
    flush_each_write: bool,
    arrays: RwLock<HashMap<String, Arc<MappedArray>>>,
    stats: StatsCell,
}

#[derive(Debug)]
struct MappedArray {
    handle: ArrayHandle,
    path: PathBuf,
    map: RwLock<MmapMut>,
}

impl MappedFileBackend {
    pub fn new(config: &MappedFileConfig) -> Result<Self> {
        let (dir, scratch) = match &config.dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
                (dir.clone(), None)
            }
            None => {
                let tmp = tempfile::Builder::new()
                    .prefix("tstore-")
                    .tempdir()
                    .map_err(|e| Error::storage(std::env::temp_dir(), e))?;
                (tmp.path().to_path_buf(), Some(tmp))
            }
        };
        Ok(Self {
            id: next_backend_id(),
            dir,
            _scratch: scratch,
            flush_each_write: config.flush_each_write,
            arrays: RwLock::default(),
            stats: StatsCell::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn array_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.arr"))
    }

    fn array(&self, handle: &ArrayHandle) -> Result<Arc<MappedArray>> {
        check_handle(self.id, handle)?;
        self.arrays
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(handle.name())
            .cloned()
            .ok_or_else(|| Error::UnknownArray(handle.name().to_owned()))
    }

    fn create_file(&self, path: &Path, header: &ArrayFileHeader, size: u64) -> io::Result<File> {
        use std::io::Write;
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(path)?;
        file.write_all(&header.encode())?;
        file.set_len(ARRAY_FILE_HEADER_LEN as u64 + size)?;
        Ok(file)
    }
}

impl StorageBackend for MappedFileBackend {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> BackendKind {
        BackendKind::MappedFile
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
        let path = self.array_path(name);

        let mut arrays = self.arrays.write().unwrap_or_else(|e| e.into_inner());
        if arrays.contains_key(name) || path.exists() {
            return Err(Error::DuplicateArray(name.to_owned()));
        }
        let available = available_bytes(&self.dir).map_err(|e| Error::storage(&self.dir, e))?;
        if size + ARRAY_FILE_HEADER_LEN as u64 > available {
            return Err(Error::InsufficientCapacity {
                needed: size + ARRAY_FILE_HEADER_LEN as u64,
                available,
            });
        }
        let header = ArrayFileHeader {
            version: ARRAY_FILE_VERSION,
            rows: rows as u64,
            cols: cols as u64,
            width,
            layout,
        };
        let file = self
            .create_file(&path, &header, size)
            .map_err(|e| Error::storage(&path, e))?;
        // SAFETY: the file was created exclusively above and is only mutated through this map.
        let map = unsafe { MmapOptions::new().map_mut(&file) }.map_err(|e| Error::storage(&path, e))?;
        arrays.insert(
            name.to_owned(),
            Arc::new(MappedArray {
                handle: handle.clone(),
                path,
                map: RwLock::new(map),
            }),
        );
        drop(arrays);

        let wall = started.elapsed().as_secs_f64();
        self.stats.update(|s| {
            s.allocations += 1;
            s.alloc_wall_time += wall;
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
            let map = array.map.read().unwrap_or_else(|e| e.into_inner());
            region::read_from(h, &rows, &cols, &extents, &map[ARRAY_FILE_HEADER_LEN..], out);
        }
        self.stats.update(|s| {
            s.read_ops += 1;
            s.bytes_read += out.len() as u64;
            s.transfers += extents.len() as u64;
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
            let mut map = array.map.write().unwrap_or_else(|e| e.into_inner());
            region::write_into(
                h,
                &rows,
                &cols,
                &extents,
                data,
                &mut map[ARRAY_FILE_HEADER_LEN..],
            );
            if self.flush_each_write {
                let w = h.element_width().bytes();
                let lo = extents.iter().map(|e| e.start).min().unwrap_or(0) * w;
                let hi = extents.iter().map(|e| e.start + e.len).max().unwrap_or(0) * w;
                map.flush_range(ARRAY_FILE_HEADER_LEN + lo, hi - lo)
                    .map_err(|e| Error::storage(&array.path, e))?;
            }
        }
        let flushed = u64::from(self.flush_each_write);
        self.stats.update(|s| {
            s.write_ops += 1;
            s.bytes_written += data.len() as u64;
            s.transfers += extents.len() as u64;
            s.flushes += flushed;
        });
        Ok(())
    }

    fn flush(&self, handle: &ArrayHandle) -> Result<()> {
        let array = self.array(handle)?;
        array
            .map
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .flush()
            .map_err(|e| Error::storage(&array.path, e))?;
        self.stats.update(|s| s.flushes += 1);
        Ok(())
    }

    fn stats(&self) -> BackendStats {
        self.stats.snapshot()
    }

    fn reset_stats(&self) {
        self.stats.reset();
    }
}

#[cfg(unix)]
fn available_bytes(dir: &Path) -> io::Result<u64> {
    use std::ffi::CString;
    use std::os::unix::ffi::OsStrExt;

    let c_path = CString::new(dir.as_os_str().as_bytes())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    // SAFETY: statvfs only writes into the zeroed struct we own.
    let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
    if unsafe { libc::statvfs(c_path.as_ptr(), &mut st) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok((st.f_bavail as u64).saturating_mul(st.f_frsize as u64))
}

#[cfg(not(unix))]
fn available_bytes(_dir: &Path) -> io::Result<u64> {
    Ok(u64::MAX)
}
