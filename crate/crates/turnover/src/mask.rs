//! Deterministic per-example turn-over dropout masks.
//!
//! A mask is a pure function of (global seed, example id, layer index, unit index);
//! nothing is stored, masks for any number of examples are recomputed on demand and
//! are bit-identical across processes and platforms.
//!
//! Dense hidden layers use per-unit Bernoulli(1/2) bits: unit `u` is kept iff
//! `mask_bit_hash(seed, example_id, layer, u) < 2^63`, where `mask_bit_hash` is the
//! SplitMix64 finalizer chain defined below (constants in [`crate::rng::mix64`]).
//! Conv layers use an exact-half seeded permutation over output channels.
//!
//! Masks attach to a maskable layer's output: dropped positions become exactly 0.0
//! and kept positions are multiplied by the inverted-dropout scale 1/p = 2, both in
//! training and in sub-network evaluation.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{MaskKind, MaskableLayer, ModelConfig};
use crate::rng::{mix64, SplitMix64};
use crate::scalar::Scalar;

/// Keep probability for every maskable layer.
pub const KEEP_PROBABILITY: f64 = 0.5;

/// Inverted-dropout scale applied to kept units: 1 / KEEP_PROBABILITY.
pub const KEEP_SCALE: f64 = 2.0;

/// Stream label mixed in when seeding the spatial channel permutation.
const SPATIAL_STREAM: u64 = 0x7370_6154_6961_6c4d;

/// Identity of one mask bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaskKey {
    pub global_seed: u64,
    pub example_id: u64,
    pub layer_index: u32,
    pub unit_index: u32,
}

/// The full mixing chain: three SplitMix64 finalizer rounds folding in the seed,
/// the example id, and the packed (layer, unit) pair.
#[inline]
pub fn mask_bit_hash(key: MaskKey) -> u64 {
    let a = mix64(key.global_seed);
    let b = mix64(a ^ key.example_id);
    mix64(b ^ (((key.layer_index as u64) << 32) | key.unit_index as u64))
}

#[inline]
fn keep_bit(key: MaskKey) -> bool {
    mask_bit_hash(key) < (1u64 << 63)
}

/// Packed bit vector, LSB-first within 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bits {
    width: usize,
    words: Vec<u64>,
}

impl Bits {
    pub fn zeros(width: usize) -> Self {
        Bits {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.width);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        let (w, b) = (i / 64, i % 64);
        if v {
            self.words[w] |= 1 << b;
        } else {
            self.words[w] &= !(1 << b);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Bitwise complement within the width.
    pub fn complement(&self) -> Bits {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let tail = self.width % 64;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Bits {
            width: self.width,
            words,
        }
    }

    /// First 64 bits (or all of them when width < 64) as a hex word, LSB-first packing.
    pub fn hex64(&self) -> String {
        format!("{:016x}", self.words.first().copied().unwrap_or(0))
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

/// Per-unit mask over one dense hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitMask {
    pub layer_index: usize,
    pub bits: Bits,
    pub scale: f64,
}

/// Per-channel mask over one conv layer's feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMask {
    pub layer_index: usize,
    pub channel_bits: Bits,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerMask {
    Unit(UnitMask),
    Spatial(SpatialMask),
}

impl LayerMask {
    pub fn layer_index(&self) -> usize {
        match self {
            LayerMask::Unit(m) => m.layer_index,
            LayerMask::Spatial(m) => m.layer_index,
        }
    }

    pub fn bits(&self) -> &Bits {
        match self {
            LayerMask::Unit(m) => &m.bits,
            LayerMask::Spatial(m) => &m.channel_bits,
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            LayerMask::Unit(m) => m.scale,
            LayerMask::Spatial(m) => m.scale,
        }
    }

    pub fn flipped(&self) -> LayerMask {
        match self {
            LayerMask::Unit(m) => LayerMask::Unit(flip_unit(m)),
            LayerMask::Spatial(m) => LayerMask::Spatial(flip_spatial(m)),
        }
    }

    pub fn set_scale(&mut self, scale: f64) {
        match self {
            LayerMask::Unit(m) => m.scale = scale,
            LayerMask::Spatial(m) => m.scale = scale,
        }
    }
}

/// Bernoulli(1/2) unit mask derived from the mixing hash.
pub fn mask_for(seed: u64, example_id: u64, layer_index: usize, width: usize) -> Result<UnitMask> {
    if width < 2 {
        return Err(Error::config(format!(
            "mask width must be >= 2 (layer {layer_index} has width {width})"
        )));
    }
    let mut bits = Bits::zeros(width);
    for u in 0..width {
        let key = MaskKey {
            global_seed: seed,
            example_id,
            layer_index: layer_index as u32,
            unit_index: u as u32,
        };
        if keep_bit(key) {
            bits.set(u, true);
        }
    }
    Ok(UnitMask {
        layer_index,
        bits,
        scale: KEEP_SCALE,
    })
}

/// Exact-half channel mask: a seeded permutation of channel indices keeps the
/// first ceil(C/2).
pub fn spatial_mask_for(seed: u64, example_id: u64, layer_index: usize, channels: usize) -> Result<SpatialMask> {
    if channels < 2 {
        return Err(Error::config(format!(
            "spatial mask needs >= 2 channels (layer {layer_index} has {channels})"
        )));
    }
    let state = mix64(mix64(seed) ^ example_id) ^ ((layer_index as u64) << 32) ^ SPATIAL_STREAM;
    let mut rng = SplitMix64::new(state);
    let mut perm: Vec<usize> = (0..channels).collect();
    rng.shuffle(&mut perm);
    let keep = channels.div_ceil(2);
    let mut bits = Bits::zeros(channels);
    for &c in &perm[..keep] {
        bits.set(c, true);
    }
    Ok(SpatialMask {
        layer_index,
        channel_bits: bits,
        scale: KEEP_SCALE,
    })
}

pub fn flip_unit(mask: &UnitMask) -> UnitMask {
    UnitMask {
        layer_index: mask.layer_index,
        bits: mask.bits.complement(),
        scale: mask.scale,
    }
}

pub fn flip_spatial(mask: &SpatialMask) -> SpatialMask {
    SpatialMask {
        layer_index: mask.layer_index,
        channel_bits: mask.channel_bits.complement(),
        scale: mask.scale,
    }
}

/// One example's masks, one per maskable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub example_id: u64,
    pub masks: Vec<LayerMask>,
}

impl MaskSet {
    pub fn flipped(&self) -> MaskSet {
        MaskSet {
            example_id: self.example_id,
            masks: self.masks.iter().map(LayerMask::flipped).collect(),
        }
    }

    pub fn mask_at_layer(&self, layer_index: usize) -> Option<&LayerMask> {
        self.masks.iter().find(|m| m.layer_index() == layer_index)
    }

    pub fn set_scale(&mut self, scale: f64) {
        for m in &mut self.masks {
            m.set_scale(scale);
        }
    }
}

/// Builds the full mask set for one example under a model config.
pub fn mask_set_for(seed: u64, example_id: u64, config: &ModelConfig) -> Result<MaskSet> {
    let maskable = config.maskable_layers();
    mask_set_for_layers(seed, example_id, &maskable)
}

pub fn mask_set_for_layers(seed: u64, example_id: u64, maskable: &[MaskableLayer]) -> Result<MaskSet> {
    if maskable.is_empty() {
        return Err(Error::config("model has no maskable layers"));
    }
    let mut masks = Vec::with_capacity(maskable.len());
    for layer in maskable {
        let m = match layer.kind {
            MaskKind::Unit { width } => LayerMask::Unit(mask_for(seed, example_id, layer.layer_index, width)?),
            MaskKind::Spatial { channels } => {
                LayerMask::Spatial(spatial_mask_for(seed, example_id, layer.layer_index, channels)?)
            }
        };
        masks.push(m);
    }
    Ok(MaskSet { example_id, masks })
}

/// Masks for every row of a batch, aligned with the batch's example order.
#[derive(Debug, Clone)]
pub struct BatchMasks {
    pub sets: Vec<MaskSet>,
}

impl BatchMasks {
    pub fn for_ids(seed: u64, ids: &[u64], config: &ModelConfig, flip: bool, scale: f64) -> Result<BatchMasks> {
        let maskable = config.maskable_layers();
        let mut sets = Vec::with_capacity(ids.len());
        for &id in ids {
            let mut set = mask_set_for_layers(seed, id, &maskable)?;
            if flip {
                set = set.flipped();
            }
            set.set_scale(scale);
            sets.push(set);
        }
        Ok(BatchMasks { sets })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Zeroes dropped positions and scales kept ones, in place over one activation row.
/// For unit masks `chunk` is 1; for spatial masks it is the per-channel plane size.
pub fn apply_row<S: Scalar>(row: &mut [S], mask: &LayerMask, chunk: usize) -> Result<()> {
    let bits = mask.bits();
    if row.len() != bits.width() * chunk {
        return Err(Error::input(format!(
            "mask width {} x chunk {chunk} does not match activation length {}",
            bits.width(),
            row.len()
        )));
    }
    let scale = S::from_f64(mask.scale());
    for (i, slot) in row.chunks_mut(chunk).enumerate() {
        if bits.get(i) {
            for v in slot {
                *v *= scale;
            }
        } else {
            for v in slot {
                *v = S::ZERO;
            }
        }
    }
    Ok(())
}

/// One committed fixture line: `seed,example_id,layer,width,hex64`.
pub fn fixture_line(seed: u64, example_id: u64, layer_index: usize, width: usize) -> Result<String> {
    let mask = mask_for(seed, example_id, layer_index, width)?;
    let mut s = String::new();
    write!(s, "{seed},{example_id},{layer_index},{width},{}", mask.bits.hex64()).expect("fmt");
    Ok(s)
}

/// Regenerates the canonical 1,000-entry fixture body (no trailing newline).
pub fn fixture_body() -> Result<String> {
    let mut lines = Vec::with_capacity(1000);
    for i in 0..1000u64 {
        let seed = mix64(i);
        let example_id = mix64(i ^ 0xABCD_EF01);
        let layer = (i % 4) as usize;
        let width = [64usize, 128, 512, 4096][(i % 4) as usize];
        lines.push(fixture_line(seed, example_id, layer, width)?);
    }
    Ok(lines.join("\n"))
}

/// Verifies a committed fixture file against regeneration, bit-exactly.
pub fn verify_fixture(path: &Path) -> Result<()> {
    let committed = std::fs::read_to_string(path)?;
    let expected = fixture_body()?;
    if committed.trim_end_matches('\n') != expected {
        return Err(Error::Internal(format!(
            "mask fixture {} does not match regeneration",
            path.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Precision;

    #[test]
    fn same_key_same_bits() {
        let a = mask_for(42, 7, 0, 256).unwrap();
        let b = mask_for(42, 7, 0, 256).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn keep_fraction_near_half_at_width_4096() {
        let m = mask_for(42, 0, 0, 4096).unwrap();
        let frac = m.bits.count_ones() as f64 / 4096.0;
        assert!((0.45..=0.55).contains(&frac), "keep fraction {frac}");
    }

    #[test]
    fn distinct_examples_get_distinct_masks() {
        // 10,000 ids at width 4096 must be pairwise distinct; comparing the first
        // word of each mask already separates them with overwhelming probability,
        // and full equality is checked on collisions of that word.
        let masks: Vec<Bits> = (0..10_000u64)
            .map(|id| mask_for(42, id, 0, 4096).unwrap().bits)
            .collect();
        let mut first_words: Vec<(u64, usize)> = masks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.words()[0], i))
            .collect();
        first_words.sort_unstable();
        for w in first_words.windows(2) {
            if w[0].0 == w[1].0 {
                assert_ne!(masks[w[0].1], masks[w[1].1]);
            }
        }
    }

    #[test]
    fn flip_is_involution_and_partition() {
        let m = mask_for(1, 2, 3, 130).unwrap();
        let f = flip_unit(&m);
        assert_eq!(flip_unit(&f), m);
        assert_eq!(m.bits.count_ones() + f.bits.count_ones(), 130);
        for i in 0..130 {
            assert!(m.bits.get(i) ^ f.bits.get(i));
        }
    }

    #[test]
    fn spatial_exact_half() {
        for channels in [2usize, 3, 16, 17, 32] {
            let m = spatial_mask_for(9, 5, 1, channels).unwrap();
            assert_eq!(m.channel_bits.count_ones(), channels.div_ceil(2), "C={channels}");
            let f = flip_spatial(&m);
            assert_eq!(f.channel_bits.count_ones(), channels / 2);
        }
    }

    #[test]
    fn width_below_two_rejected() {
        assert!(mask_for(0, 0, 0, 1).is_err());
        assert!(spatial_mask_for(0, 0, 0, 1).is_err());
    }

    #[test]
    fn mask_set_for_mlp_has_one_unit_mask() {
        let cfg = ModelConfig::mlp(784, 4096, 10, 0, Precision::F32);
        let set = mask_set_for(7, 0, &cfg).unwrap();
        assert_eq!(set.masks.len(), 1);
        assert!(matches!(set.masks[0], LayerMask::Unit(_)));
    }

    #[test]
    fn mask_set_for_cnn_mixes_kinds() {
        let cfg = ModelConfig::small_cnn(3, 32, 128, 10, 0, Precision::F32);
        let set = mask_set_for(7, 0, &cfg).unwrap();
        assert_eq!(set.masks.len(), 3);
        let spatial = set.masks.iter().filter(|m| matches!(m, LayerMask::Spatial(_))).count();
        assert_eq!(spatial, 2);
    }

    #[test]
    fn mask_set_differs_between_examples() {
        let cfg = ModelConfig::mlp(10, 64, 3, 0, Precision::F32);
        let a = mask_set_for(7, 0, &cfg).unwrap();
        let b = mask_set_for(7, 1, &cfg).unwrap();
        assert_ne!(a.masks, b.masks);
    }

    #[test]
    fn no_maskable_layers_rejected() {
        let cfg = ModelConfig {
            input_shape: vec![4],
            layers: vec![
                crate::nn::LayerSpec::Dense { input: 4, output: 3 },
                crate::nn::LayerSpec::SoftmaxHead { classes: 3 },
            ],
            init_seed: 0,
            precision: Precision::F64,
        };
        assert!(mask_set_for(0, 0, &cfg).is_err());
    }

    #[test]
    fn apply_scales_and_zeroes() {
        let mut mask = mask_for(3, 1, 0, 4).unwrap();
        mask.scale = 2.0;
        let mut row = vec![3.0f64, 3.0, 3.0, 3.0];
        apply_row(&mut row, &LayerMask::Unit(mask.clone()), 1).unwrap();
        for i in 0..4 {
            if mask.bits.get(i) {
                assert_eq!(row[i], 6.0);
            } else {
                assert_eq!(row[i], 0.0);
            }
        }
    }

    #[test]
    fn apply_partition_recovers_input() {
        // (apply(a, m) + apply(a, flip(m))) / scale == a elementwise.
        let mask = mask_for(11, 4, 0, 16).unwrap();
        let a: Vec<f64> = (0..16).map(|i| i as f64 - 7.5).collect();
        let mut kept = a.clone();
        let mut muted = a.clone();
        apply_row(&mut kept, &LayerMask::Unit(mask.clone()), 1).unwrap();
        apply_row(&mut muted, &LayerMask::Unit(flip_unit(&mask)), 1).unwrap();
        for i in 0..16 {
            let sum = (kept[i] + muted[i]) / KEEP_SCALE;
            assert!((sum - a[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_rejects_length_mismatch() {
        let mask = mask_for(3, 1, 0, 4).unwrap();
        let mut row = vec![0.0f64; 5];
        assert!(apply_row(&mut row, &LayerMask::Unit(mask), 1).is_err());
    }

    #[test]
    fn spatial_apply_zeroes_whole_channels() {
        let m = spatial_mask_for(1, 2, 0, 4).unwrap();
        let mut plane = vec![1.0f64; 4 * 3]; // 4 channels, 3 values each
        apply_row(&mut plane, &LayerMask::Spatial(m.clone()), 3).unwrap();
        for c in 0..4 {
            for v in &plane[c * 3..(c + 1) * 3] {
                if m.channel_bits.get(c) {
                    assert_eq!(*v, KEEP_SCALE);
                } else {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }
}
