//! IDX raster files: `00 00 <type> <ndims>`, big-endian u32 extents, payload.
//! Only unsigned-byte payloads (type 0x08) are accepted.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;

/// Decodes an IDX stream, scaling bytes to `[0, 1]`.
pub fn read_idx(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated {
            expected: 4,
            found: bytes.len(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::IdxBadMagic(bytes[0], bytes[1]));
    }
    if bytes[2] != UBYTE {
        return Err(Error::IdxUnsupportedType(bytes[2]));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::IdxTruncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let shape: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .ok_or_else(|| Error::invalid("idx: declared extents overflow"))?;
    let expected = header + count;
    if bytes.len() < expected {
        return Err(Error::IdxTruncated {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[header..expected]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Tensor::new(if shape.is_empty() { vec![1] } else { shape }, data)
}

pub fn read_idx_file(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_idx(&bytes)
}

/// Encodes values in `[0, 1]` as an unsigned-byte IDX stream (round half up).
pub fn encode_idx(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, t.rank() as u8];
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_be_bytes());
    }
    out.extend(t.data().iter().map(|&v| unit_to_byte(v)));
    out
}

/// `[0, 1]` to `0..=255`, clamped, rounding half up.
pub fn unit_to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}
