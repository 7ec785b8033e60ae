//! CIFAR-10 binary batches: each record is 1 label byte followed by 3072 pixel
//! bytes (channel-planar R, G, B; 32x32 row-major).

use std::path::Path;

use crate::error::{Error, Result};

use super::idx::fnv1a64;
use super::{Dataset, Example, Split};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;
const CIFAR_CLASSES: usize = 10;

/// Parses one batch file's bytes into (label, pixels in [0,1]) records.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<(u8, Vec<f32>)>> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::format(
            bytes.len() - bytes.len() % CIFAR_RECORD_BYTES,
            format!(
                "file length {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record size",
                bytes.len()
            ),
        ));
    }
    let mut out = Vec::with_capacity(bytes.len() / CIFAR_RECORD_BYTES);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0];
        if label as usize >= CIFAR_CLASSES {
            return Err(Error::format(
                i * CIFAR_RECORD_BYTES,
                format!("label byte {label} out of range"),
            ));
        }
        out.push((label, record[1..].iter().map(|&b| b as f32 / 255.0).collect()));
    }
    Ok(out)
}

/// Loads one or more batch files; example_id is the record index across the
/// concatenation, in the order the paths are given.
pub fn load_cifar10(batch_paths: &[&Path], split: Split) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::input("no CIFAR-10 batch paths given"));
    }
    let mut examples = Vec::new();
    let mut provenance = Vec::new();
    let mut next_id = 0u64;
    for path in batch_paths {
        let bytes = std::fs::read(path)?;
        provenance.push(("source".to_string(), format!("cifar10:{}", path.display())));
        provenance.push(("digest".to_string(), format!("{:016x}", fnv1a64(&bytes))));
        for (label, pixels) in parse_cifar10(&bytes)? {
            examples.push(Example {
                id: next_id,
                pixels,
                observed_label: label as usize,
                original_label: label as usize,
                corrupted: false,
            });
            next_id += 1;
        }
    }
    Ok(Dataset {
        input_shape: vec![CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE],
        classes: CIFAR_CLASSES,
        split,
        examples,
        provenance,
    })
}

/// Serializes records back to the binary batch format.
pub fn write_cifar10_batch(records: &[(u8, Vec<f32>)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for (label, pixels) in records {
        assert_eq!(pixels.len(), CIFAR_RECORD_BYTES - 1);
        out.push(*label);
        out.extend(pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}
