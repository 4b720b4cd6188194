use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::paramspace::ParamVector;

const MAGIC: &[u8; 5] = b"GALN1";

/// Header, little-endian `u64` length, then little-endian `f64` values.
pub fn encode_checkpoint(x: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + 8 * x.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(x.len() as u64).to_le_bytes());
    for v in x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamVector> {
    let bad = |msg: &str| Error::usage(format!("invalid checkpoint: {msg}"));
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("missing header"))?;
    let (len, data) = rest.split_first_chunk::<8>().ok_or_else(|| bad("truncated length"))?;
    let d = u64::from_le_bytes(*len) as usize;
    if data.len() != d.checked_mul(8).ok_or_else(|| bad("length overflow"))? {
        return Err(bad("payload size does not match the stored dimension"));
    }
    let values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    ParamVector::new(values).map_err(|_| bad("non-finite value"))
}

pub fn write_checkpoint(path: &Path, x: &ParamVector) -> Result<()> {
    fs::write(path, encode_checkpoint(x))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ParamVector> {
    decode_checkpoint(&fs::read(path)?)
}
