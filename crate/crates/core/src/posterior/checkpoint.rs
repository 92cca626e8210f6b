//! Binary checkpoint of a [`SwagState`].
//!
//! ```text
//! "SWAG" | version: u16 LE | header_len: u32 LE | header: UTF-8 JSON
//!        | mean: P x f64 LE | sq_mean: P x f64 LE
//!        | deviations: P x K x element_width LE, column-major, oldest first
//!        | crc32 of every preceding byte: u32 LE
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{DeviationPlacement, MomentAccumulator, SwagConfig, SwagState};
use crate::error::{Error, Result};
use crate::store::ElementWidth;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SWAG";
pub const CHECKPOINT_VERSION: u16 = 1;
const PREAMBLE_LEN: usize = 4 + 2 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    #[serde(rename = "P")]
    pub params: u64,
    #[serde(rename = "T")]
    pub accepted: u64,
    pub total_seen: u64,
    #[serde(rename = "K")]
    pub rank: u64,
    #[serde(rename = "K_max")]
    pub max_columns: u64,
    #[serde(rename = "B")]
    pub burn_in: u64,
    #[serde(rename = "s")]
    pub scale: f64,
    #[serde(rename = "epsilon")]
    pub variance_floor: f64,
    pub element_width: ElementWidth,
}

impl SwagState {
    pub fn checkpoint_header(&self) -> CheckpointHeader {
        CheckpointHeader {
            params: self.dim() as u64,
            accepted: self.accepted(),
            total_seen: self.total_seen,
            rank: self.stored as u64,
            max_columns: self.config.max_columns as u64,
            burn_in: self.config.burn_in,
            scale: self.config.scale,
            variance_floor: self.config.variance_floor,
            element_width: self.config.element_width,
        }
    }

    /// Serialises the full state. Buffered deviation writes are read through,
    /// so no flush is needed beforehand.
    pub fn checkpoint<W: Write>(&self, sink: W) -> Result<()> {
        let mut sink = CrcWriter::new(sink);
        let header = serde_json::to_vec(&self.checkpoint_header())
            .map_err(|e| Error::Format(format!("encoding checkpoint header: {e}")))?;
        sink.write_all(CHECKPOINT_MAGIC)?;
        sink.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        sink.write_all(&(header.len() as u32).to_le_bytes())?;
        sink.write_all(&header)?;
        for v in self.moments.mean() {
            sink.write_all(&v.to_le_bytes())?;
        }
        for v in self.moments.sq_mean() {
            sink.write_all(&v.to_le_bytes())?;
        }
        for k in 0..self.stored {
            sink.write_all(&self.deviation_column_bytes(k)?)?;
        }
        let crc = sink.hasher.clone().finalize();
        sink.inner.write_all(&crc.to_le_bytes())?;
        sink.inner.flush()?;
        Ok(())
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.checkpoint(&mut out)?;
        Ok(out)
    }

    /// Rebuilds a state from a checkpoint stream, placing the deviation matrix
    /// as `placement` describes. The stream is validated in full before any
    /// storage is allocated.
    pub fn restore<R: Read>(mut source: R, placement: &DeviationPlacement) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        let parsed = Parsed::parse(&bytes)?;
        let h = parsed.header;

        let config = SwagConfig {
            burn_in: h.burn_in,
            max_columns: h.max_columns as usize,
            scale: h.scale,
            variance_floor: h.variance_floor,
            element_width: h.element_width,
            allow_overcomplete: h.max_columns > h.params,
        };
        let dim = h.params as usize;
        config.validate(dim)?;

        let mut columns = placement.allocate(dim, config.max_columns, config.element_width)?;
        let col_bytes = dim * h.element_width.bytes();
        for (k, column) in parsed.deviations.chunks_exact(col_bytes).enumerate() {
            columns.write_column(k, column)?;
        }
        columns.flush()?;

        let moments = MomentAccumulator::from_parts(
            h.accepted,
            decode_f64s(parsed.mean),
            decode_f64s(parsed.sq_mean),
        );
        Ok(SwagState::from_parts(
            config,
            moments,
            columns,
            h.total_seen,
            h.rank as usize,
        ))
    }
}

struct Parsed<'a> {
    header: CheckpointHeader,
    mean: &'a [u8],
    sq_mean: &'a [u8],
    deviations: &'a [u8],
}

impl<'a> Parsed<'a> {
    fn parse(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a posterior checkpoint (bad magic)".into()));
        }
        if bytes.len() < PREAMBLE_LEN {
            return Err(Error::Corrupt("checkpoint truncated inside preamble".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let header_end = PREAMBLE_LEN
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Corrupt("checkpoint truncated inside header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[PREAMBLE_LEN..header_end])
            .map_err(|e| Error::Format(format!("invalid checkpoint header: {e}")))?;
        Self::check_header(&header)?;

        let p = header.params as usize;
        let vec_len = p * 8;
        let dev_len = p
            .checked_mul(header.rank as usize)
            .and_then(|n| n.checked_mul(header.element_width.bytes()))
            .ok_or_else(|| Error::Format("checkpoint dimensions overflow".into()))?;
        let body_end = header_end + 2 * vec_len + dev_len;
        if bytes.len() < body_end + 4 {
            return Err(Error::Corrupt(format!(
                "checkpoint truncated: {} bytes, expected {}",
                bytes.len(),
                body_end + 4
            )));
        }
        if bytes.len() > body_end + 4 {
            return Err(Error::Corrupt("trailing bytes after checkpoint".into()));
        }
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        let actual = crc32fast::hash(&bytes[..body_end]);
        if stored != actual {
            return Err(Error::Corrupt(format!(
                "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        Ok(Self {
            header,
            mean: &bytes[header_end..header_end + vec_len],
            sq_mean: &bytes[header_end + vec_len..header_end + 2 * vec_len],
            deviations: &bytes[header_end + 2 * vec_len..body_end],
        })
    }

    fn check_header(h: &CheckpointHeader) -> Result<()> {
        let expected_rank = h.accepted.min(h.max_columns);
        if h.params == 0 || h.max_columns == 0 || h.rank != expected_rank {
            return Err(Error::Format(format!(
                "inconsistent checkpoint header: P={}, T={}, K={}, K_max={}",
                h.params, h.accepted, h.rank, h.max_columns
            )));
        }
        if h.total_seen.saturating_sub(h.burn_in) != h.accepted {
            return Err(Error::Format(format!(
                "inconsistent checkpoint header: total_seen={}, B={}, T={}",
                h.total_seen, h.burn_in, h.accepted
            )));
        }
        Ok(())
    }
}

fn decode_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

struct CrcWriter<W> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> CrcWriter<W> {
    fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}
