//! IDX tensors, the container format of the MNIST distribution.
//!
//! Layout: two zero bytes, a type code, the number of dimensions `n`, then
//! `n` big-endian `u32` sizes and the big-endian payload.

use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_TYPE_U8: u8 = 0x08;
pub const IDX_TYPE_I32: u8 = 0x0C;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "IDX stream of {} bytes has no magic number",
            bytes.len()
        )));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format(format!(
            "bad IDX magic {:02x} {:02x} {:02x} {:02x}",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    let elem_size = match bytes[2] {
        IDX_TYPE_U8 => 1,
        IDX_TYPE_I32 => 4,
        other => {
            return Err(Error::Format(format!("unsupported IDX type code 0x{other:02x}")));
        }
    };
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(Error::Format("IDX tensor with zero dimensions".into()));
    }
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::Corrupt(format!(
            "IDX header truncated: need {header_len} bytes, got {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload_len = count
        .checked_mul(elem_size)
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[header_len..];
    if payload.len() < payload_len {
        return Err(Error::Corrupt(format!(
            "IDX payload truncated: need {payload_len} bytes, got {}",
            payload.len()
        )));
    }
    if payload.len() > payload_len {
        return Err(Error::Corrupt(format!(
            "IDX payload has {} trailing bytes",
            payload.len() - payload_len
        )));
    }
    let data = match elem_size {
        1 => IdxData::U8(payload.to_vec()),
        _ => IdxData::I32(
            payload
                .chunks_exact(4)
                .map(|c| i32::from_be_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(IdxTensor { dims, data })
}

pub fn read_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::storage(path, e))?;
    parse_idx(&bytes).map_err(|e| e.context(format!("reading {}", path.display())))
}

/// Encodes an unsigned-byte tensor.
pub fn encode_idx_u8(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_TYPE_U8, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}
