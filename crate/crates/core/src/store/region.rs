//! Mapping from logical regions to physically contiguous extents.

use std::ops::Range;

use super::{ArrayHandle, Layout};
use crate::error::{Error, Result};

/// A physically contiguous run of elements, as element offsets into the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Extent {
    pub start: usize,
    pub len: usize,
}

impl Extent {
    pub fn byte_range(&self, width: usize) -> Range<usize> {
        self.start * width..(self.start + self.len) * width
    }
}

/// Checks bounds and the buffer length for a region access.
pub(crate) fn validate(
    handle: &ArrayHandle,
    rows: &Range<usize>,
    cols: &Range<usize>,
    buf_len: usize,
) -> Result<()> {
    if rows.start >= rows.end || rows.end > handle.rows() {
        return Err(Error::OutOfBounds(format!(
            "rows {rows:?} of `{}` with {} rows",
            handle.name(),
            handle.rows()
        )));
    }
    if cols.start >= cols.end || cols.end > handle.cols() {
        return Err(Error::OutOfBounds(format!(
            "columns {cols:?} of `{}` with {} columns",
            handle.name(),
            handle.cols()
        )));
    }
    let expected = rows.len() * cols.len() * handle.element_width().bytes();
    if buf_len != expected {
        return Err(Error::Dimension {
            expected,
            actual: buf_len,
        });
    }
    Ok(())
}

/// Splits a region into the contiguous transfers its layout requires.
///
/// A column-major array transfers one run per column (one run in total when
/// the region spans whole columns); a row-major array transfers one run per
/// row (one in total when the region spans whole rows).
pub(crate) fn plan(handle: &ArrayHandle, rows: &Range<usize>, cols: &Range<usize>) -> Vec<Extent> {
    let (n_rows, n_cols) = (handle.rows(), handle.cols());
    match handle.layout() {
        Layout::ColMajor => {
            if rows.len() == n_rows {
                vec![Extent {
                    start: cols.start * n_rows,
                    len: cols.len() * n_rows,
                }]
            } else {
                cols.clone()
                    .map(|c| Extent {
                        start: c * n_rows + rows.start,
                        len: rows.len(),
                    })
                    .collect()
            }
        }
        Layout::RowMajor => {
            if cols.len() == n_cols {
                vec![Extent {
                    start: rows.start * n_cols,
                    len: rows.len() * n_cols,
                }]
            } else {
                rows.clone()
                    .map(|r| Extent {
                        start: r * n_cols + cols.start,
                        len: cols.len(),
                    })
                    .collect()
            }
        }
    }
}

/// Position of physical element `p` inside the column-ordered region buffer.
#[inline]
fn buffer_index(handle: &ArrayHandle, rows: &Range<usize>, cols: &Range<usize>, p: usize) -> usize {
    let (r, c) = match handle.layout() {
        Layout::ColMajor => (p % handle.rows(), p / handle.rows()),
        Layout::RowMajor => (p / handle.cols(), p % handle.cols()),
    };
    (c - cols.start) * rows.len() + (r - rows.start)
}

/// Copies the part of `region` that belongs to `extent` into `physical`,
/// the array bytes covered by the extent.
pub(crate) fn scatter(
    handle: &ArrayHandle,
    rows: &Range<usize>,
    cols: &Range<usize>,
    extent: Extent,
    region: &[u8],
    physical: &mut [u8],
) {
    let w = handle.element_width().bytes();
    debug_assert_eq!(physical.len(), extent.len * w);
    if handle.layout() == Layout::ColMajor || rows.len() == 1 {
        // Consecutive physical elements are consecutive in the region buffer.
        let b = buffer_index(handle, rows, cols, extent.start) * w;
        physical.copy_from_slice(&region[b..b + extent.len * w]);
        return;
    }
    for k in 0..extent.len {
        let b = buffer_index(handle, rows, cols, extent.start + k) * w;
        physical[k * w..(k + 1) * w].copy_from_slice(&region[b..b + w]);
    }
}

/// Inverse of [`scatter`].
pub(crate) fn gather(
    handle: &ArrayHandle,
    rows: &Range<usize>,
    cols: &Range<usize>,
    extent: Extent,
    physical: &[u8],
    region: &mut [u8],
) {
    let w = handle.element_width().bytes();
    debug_assert_eq!(physical.len(), extent.len * w);
    if handle.layout() == Layout::ColMajor || rows.len() == 1 {
        let b = buffer_index(handle, rows, cols, extent.start) * w;
        region[b..b + extent.len * w].copy_from_slice(physical);
        return;
    }
    for k in 0..extent.len {
        let b = buffer_index(handle, rows, cols, extent.start + k) * w;
        region[b..b + w].copy_from_slice(&physical[k * w..(k + 1) * w]);
    }
}

/// Writes a region into a flat byte image of the whole array.
pub(crate) fn write_into(
    handle: &ArrayHandle,
    rows: &Range<usize>,
    cols: &Range<usize>,
    extents: &[Extent],
    data: &[u8],
    image: &mut [u8],
) {
    let w = handle.element_width().bytes();
    for &e in extents {
        scatter(handle, rows, cols, e, data, &mut image[e.byte_range(w)]);
    }
}

pub(crate) fn read_from(
    handle: &ArrayHandle,
    rows: &Range<usize>,
    cols: &Range<usize>,
    extents: &[Extent],
    image: &[u8],
    out: &mut [u8],
) {
    let w = handle.element_width().bytes();
    for &e in extents {
        gather(handle, rows, cols, e, &image[e.byte_range(w)], out);
    }
}
