//! Binary encoding of sparse matrices for model directories.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 8     | magic `XMCSPMAT` |
//! | 4     | format version (u32) |
//! | 1     | byte-order tag, `0x01` = little-endian |
//! | 1     | value width in bytes (8) |
//! | 2     | reserved, zero |
//! | 8×3   | rows, cols, nnz (u64) |
//! | 8×(rows+1) | row offsets (u64) |
//! | 4×nnz | column indices (u32) |
//! | 8×nnz | values (IEEE-754 f64 bits) |
//! | 4     | CRC32 of every preceding byte |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub const MAGIC: &[u8; 8] = b"XMCSPMAT";
pub const VERSION: u32 = 1;
pub const LITTLE_ENDIAN_TAG: u8 = 0x01;
const VALUE_WIDTH: u8 = 8;
const HEADER_LEN: usize = 8 + 4 + 1 + 1 + 2 + 3 * 8;
const CRC_LEN: usize = 4;

pub fn encode_matrix(m: &SparseMatrix) -> Vec<u8> {
    let len = HEADER_LEN + 8 * (m.rows() + 1) + 12 * m.nnz() + CRC_LEN;
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(LITTLE_ENDIAN_TAG);
    out.push(VALUE_WIDTH);
    out.extend_from_slice(&[0, 0]);
    for v in [m.rows(), m.cols(), m.nnz()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &o in m.offsets() {
        out.extend_from_slice(&(o as u64).to_le_bytes());
    }
    for &i in m.indices() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for &v in m.values() {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    debug_assert_eq!(out.len(), len);
    out
}

fn u64_at(bytes: &[u8], pos: usize) -> u64 {
    u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8-byte slice"))
}

pub fn decode_matrix(bytes: &[u8]) -> Result<SparseMatrix> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN + CRC_LEN,
            available: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic(
            String::from_utf8_lossy(&bytes[..8]).into_owned(),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4-byte slice"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            expected: VERSION,
            found: version,
        });
    }
    if bytes[12] != LITTLE_ENDIAN_TAG {
        return Err(Error::Endianness(bytes[12]));
    }
    if bytes[13] != VALUE_WIDTH {
        return Err(Error::InvalidSparse(format!(
            "unsupported value width {}",
            bytes[13]
        )));
    }
    let rows = u64_at(bytes, 16);
    let cols = u64_at(bytes, 24);
    let nnz = u64_at(bytes, 32);
    let needed = (rows as u128 + 1) * 8 + nnz as u128 * 12 + (HEADER_LEN + CRC_LEN) as u128;
    if needed != bytes.len() as u128 {
        if needed > bytes.len() as u128 {
            return Err(Error::Truncated {
                needed: needed.min(usize::MAX as u128) as usize,
                available: bytes.len(),
            });
        }
        return Err(Error::InvalidSparse(format!(
            "{} trailing bytes",
            bytes.len() as u128 - needed
        )));
    }
    let body = bytes.len() - CRC_LEN;
    let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4-byte slice"));
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let (rows, nnz) = (rows as usize, nnz as usize);
    let mut pos = HEADER_LEN;
    let offsets: Vec<usize> = (0..=rows)
        .map(|r| u64_at(bytes, pos + 8 * r) as usize)
        .collect();
    pos += 8 * (rows + 1);
    let indices: Vec<u32> = bytes[pos..pos + 4 * nnz]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    pos += 4 * nnz;
    let values: Vec<f64> = bytes[pos..pos + 8 * nnz]
        .chunks_exact(8)
        .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    SparseMatrix::new(rows, cols as usize, offsets, indices, values)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &SparseMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}
