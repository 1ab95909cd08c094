//! Projector checkpoint format (all little-endian):
//!
//! ```text
//! magic      4 bytes  "RELP"
//! version    u32      1
//! layers     u32      3
//! dims       u32 x 4  d_in, h1, h2, 2K
//! per layer  f32 x (n_out * n_in) weights, row-major, then f32 x n_out bias
//! ```

use std::fs;
use std::path::Path;

use super::projector::{Linear, Projector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RELP";
const VERSION: u32 = 1;

pub fn encode_checkpoint(p: &Projector) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 4 * p.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in p.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for l in &p.layers {
        for v in l.weight.iter().chain(&l.bias) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Projector> {
    let bad = |r: String| Error::format(path, r);
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("truncated header".into()))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic".into()));
    }
    let version = word(1)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    if word(2)? != 3 {
        return Err(bad("expected 3 layers".into()));
    }
    let dims: Vec<usize> = (3..7).map(|i| word(i).map(|d| d as usize)).collect::<Result<_>>()?;
    let expected: usize = 28 + 4 * (0..3).map(|l| dims[l] * dims[l + 1] + dims[l + 1]).sum::<usize>();
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut floats = bytes[28..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
    let mut layer = |n_in: usize, n_out: usize| Linear {
        n_in,
        n_out,
        weight: floats.by_ref().take(n_in * n_out).collect(),
        bias: floats.by_ref().take(n_out).collect(),
    };
    let layers = [
        layer(dims[0], dims[1]),
        layer(dims[1], dims[2]),
        layer(dims[2], dims[3]),
    ];
    Projector::from_layers(layers).map_err(|e| bad(e.to_string()))
}

pub fn save_checkpoint(p: &Projector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Projector> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}
