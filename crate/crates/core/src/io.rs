//! Binary interchange files for logits, scores and instance ids.
//!
//! ```text
//! logits     "RLGT" magic, u32 N, u32 2K, then N x 2K f32 (row-major)
//! scores     N f32, no header
//! instances  N u32 instance ids, 0 meaning "no instance", no header
//! ```
//!
//! All values are little-endian.

use std::fs;
use std::path::Path;

use crate::energy::LogitField;
use crate::error::{Error, Result};

const LOGITS_MAGIC: &[u8; 4] = b"RLGT";

pub fn encode_logits(field: &LogitField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * field.values().len());
    out.extend_from_slice(LOGITS_MAGIC);
    out.extend_from_slice(&(field.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_logits(path: &Path, bytes: &[u8]) -> Result<LogitField> {
    if bytes.len() < 12 || &bytes[..4] != LOGITS_MAGIC {
        return Err(Error::format(path, "missing logits header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (n, width) = (word(1), word(2));
    if width == 0 || width % 2 != 0 {
        return Err(Error::format(path, format!("logit width {width} is not a positive even number")));
    }
    let expected = n
        .checked_mul(width)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(12));
    if expected != Some(bytes.len()) {
        return Err(Error::format(
            path,
            format!("header announces {n} x {width} logits but file has {} bytes", bytes.len()),
        ));
    }
    let values = f32_values(&bytes[12..]);
    LogitField::new(values, width / 2).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_scores(scores: &[f64]) -> Vec<u8> {
    scores.iter().flat_map(|s| (*s as f32).to_le_bytes()).collect()
}

pub fn decode_scores(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, format!("{} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(f32_values(bytes))
}

pub fn encode_instance_ids(ids: &[u32]) -> Vec<u8> {
    ids.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_instance_ids(path: &Path, bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, format!("{} bytes is not a whole number of u32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

fn f32_values(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_file(path: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_logits(path: impl AsRef<Path>) -> Result<LogitField> {
    let path = path.as_ref();
    decode_logits(path, &read(path)?)
}

pub fn save_logits(field: &LogitField, path: impl AsRef<Path>) -> Result<()> {
    write_file(path, encode_logits(field))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    decode_scores(path, &read(path)?)
}

pub fn save_scores(scores: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_file(path, encode_scores(scores))
}

pub fn load_instance_ids(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    decode_instance_ids(path, &read(path)?)
}

pub fn save_instance_ids(ids: &[u32], path: impl AsRef<Path>) -> Result<()> {
    write_file(path, encode_instance_ids(ids))
}
