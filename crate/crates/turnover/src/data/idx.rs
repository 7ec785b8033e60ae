//! IDX (MNIST) format: big-endian magic, dimension sizes, then raw u8 payload.
//! Image files carry magic 0x00000803 with 3 dims, label files 0x00000801 with 1.
//!
//! Parsers take byte slices so untrusted input can be fuzzed directly; any
//! malformed header or truncated payload is a format error naming the offset,
//! never a silent partial dataset.

use std::path::Path;

use crate::error::{Error, Result};

use super::{Dataset, Example, Split};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset
        .checked_add(4)
        .ok_or_else(|| Error::format(offset, "offset overflow"))?;
    if end > bytes.len() {
        return Err(Error::format(offset, "truncated header"));
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Parses an IDX image file: returns (count, rows, cols, pixels scaled to [0,1]).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic {magic:#010x}")));
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(8, "zero image dimensions"));
    }
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(4, "image payload size overflow"))?;
    let payload = &bytes[16.min(bytes.len())..];
    if payload.len() != expected {
        return Err(Error::format(
            16,
            format!("expected {expected} pixel bytes, found {}", payload.len()),
        ));
    }
    let pixels = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Ok((count, rows, cols, pixels))
}

/// Parses an IDX label file: returns the raw label bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic {magic:#010x}")));
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let payload = &bytes[8.min(bytes.len())..];
    if payload.len() != count {
        return Err(Error::format(
            8,
            format!("expected {count} label bytes, found {}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

/// Loads an image/label IDX pair into a dataset. example_id = record index.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(Error::format(
            4,
            format!("image count {count} does not match label count {}", labels.len()),
        ));
    }
    let classes = 10;
    if let Some(bad) = labels.iter().position(|&l| l as usize >= classes) {
        return Err(Error::format(8 + bad, format!("label {} out of range", labels[bad])));
    }
    let image_len = rows * cols;
    let examples = (0..count)
        .map(|i| Example {
            id: i as u64,
            pixels: pixels[i * image_len..(i + 1) * image_len].to_vec(),
            observed_label: labels[i] as usize,
            original_label: labels[i] as usize,
            corrupted: false,
        })
        .collect();
    Ok(Dataset {
        input_shape: vec![image_len],
        classes,
        split,
        examples,
        provenance: vec![
            ("source".into(), format!("idx:{}", images_path.display())),
            ("images_digest".into(), format!("{:016x}", fnv1a64(&image_bytes))),
            ("labels_digest".into(), format!("{:016x}", fnv1a64(&label_bytes))),
        ],
    })
}

/// FNV-1a over bytes; used for provenance digests in run manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Serializes images (values in [0,1], quantized back to u8) to IDX bytes.
pub fn write_idx_images(count: usize, rows: usize, cols: usize, pixels: &[f32]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend(pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
