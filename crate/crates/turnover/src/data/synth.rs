//! Deterministic synthetic datasets.
//!
//! `synth_longtail` builds small Gaussian-cluster vector datasets whose head
//! classes are dense and whose tail clusters are rare (down to singletons placed
//! in regions of their own), so leave-one-out retraining is cheap and the expected
//! score ordering is known by construction.
//!
//! `synth_images` builds image corpora with per-class structure: every class has a
//! core pattern plus several sub-prototype modes with long-tailed frequencies.
//! Head-mode examples show the core strongly over a mild class-specific variant.
//! Rare modes are atypical: a faint true-class core under a dominant confuser
//! pattern (another class's core). Their label is learnable only by attending to
//! the faint core, so models trained on head modes misread them, while models
//! trained on rare modes must amplify faint cores and therefore transfer back to
//! head examples.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

use super::{Dataset, Example, Split};

#[derive(Debug, Clone)]
pub struct LongtailSpec {
    pub n_head_classes: usize,
    pub head_examples_per_class: usize,
    /// One entry per tail cluster; size 1 makes a singleton. Tail cluster `t`
    /// carries label `t % n_head_classes` but sits in its own region.
    pub tail_cluster_sizes: Vec<usize>,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn synth_longtail(spec: &LongtailSpec) -> Result<Dataset> {
    if spec.dim < 2 {
        return Err(Error::config("longtail dim must be >= 2"));
    }
    if spec.n_head_classes == 0 || spec.head_examples_per_class == 0 {
        return Err(Error::config("longtail head counts must be >= 1"));
    }
    if spec.tail_cluster_sizes.iter().any(|&s| s == 0) {
        return Err(Error::config("tail cluster sizes must be >= 1"));
    }
    let classes = spec.n_head_classes;
    let mut rng = SplitMix64::new(derive_seed(spec.seed, 0x1017));
    let mut examples = Vec::new();
    let mut id = 0u64;

    let push = |center: &[f64], label: usize, rng: &mut SplitMix64, examples: &mut Vec<Example>, id: &mut u64| {
        let pixels: Vec<f32> = center
            .iter()
            .map(|&c| (c + rng.next_gaussian() * spec.noise_sigma) as f32)
            .collect();
        examples.push(Example {
            id: *id,
            pixels,
            observed_label: label,
            original_label: label,
            corrupted: false,
        });
        *id += 1;
    };

    // Head clusters: one well-populated cluster per class on an inner ring.
    for c in 0..classes {
        let center = ring_center(spec.dim, 0.22, c as f64 / classes as f64);
        for _ in 0..spec.head_examples_per_class {
            push(&center, c, &mut rng, &mut examples, &mut id);
        }
    }
    // Tail clusters: small clusters on an outer ring, each in its own region.
    // The label is deranged relative to the angular position so no tail cluster
    // sits radially outward of its own label's head cluster, where the label
    // would be predictable without the cluster itself.
    let n_tail = spec.tail_cluster_sizes.len();
    for (t, &size) in spec.tail_cluster_sizes.iter().enumerate() {
        let label = (t + 1) % classes;
        let center = ring_center(spec.dim, 0.45, (t as f64 + 0.5) / n_tail.max(1) as f64);
        for _ in 0..size {
            push(&center, label, &mut rng, &mut examples, &mut id);
        }
    }

    Ok(Dataset {
        input_shape: vec![spec.dim],
        classes,
        split: Split::Train,
        examples,
        provenance: vec![
            ("source".into(), "synth-longtail".into()),
            ("seed".into(), spec.seed.to_string()),
        ],
    })
}

fn ring_center(dim: usize, radius: f64, angle_frac: f64) -> Vec<f64> {
    let theta = 2.0 * std::f64::consts::PI * angle_frac;
    let mut center = vec![0.5; dim];
    center[0] = 0.5 + radius * theta.cos();
    center[1] = 0.5 + radius * theta.sin();
    center
}

#[derive(Debug, Clone)]
pub struct ImageSynthSpec {
    pub classes: usize,
    pub channels: usize,
    pub side: usize,
    pub n_examples: usize,
    /// Sub-prototype modes per class; mode 0 is the head mode.
    pub modes_per_class: usize,
    /// Sampling weights over modes, normalized internally. Long-tailed by default.
    pub mode_weights: Vec<f64>,
    pub noise_sigma: f64,
    /// Maximum absolute integer translation jitter, in pixels.
    pub max_shift: usize,
    /// Core-pattern weight inside rare-mode examples. Small values make rare
    /// modes carry little class-core evidence, so models trained only on head
    /// modes transfer poorly to them (while rare modes still pool core evidence
    /// across their own examples).
    pub tail_core_strength: f64,
    pub seed: u64,
}

impl ImageSynthSpec {
    pub fn grayscale(side: usize, n_examples: usize, seed: u64) -> Self {
        ImageSynthSpec {
            classes: 10,
            channels: 1,
            side,
            n_examples,
            modes_per_class: 4,
            mode_weights: vec![0.84, 0.10, 0.04, 0.02],
            noise_sigma: 0.12,
            max_shift: 2,
            tail_core_strength: 0.3,
            seed,
        }
    }

    pub fn rgb(side: usize, n_examples: usize, seed: u64) -> Self {
        ImageSynthSpec {
            channels: 3,
            ..ImageSynthSpec::grayscale(side, n_examples, seed)
        }
    }
}

struct Pattern {
    /// [channels * side * side], peak-normalized to 1.
    field: Vec<f64>,
}

fn bump_pattern(rng: &mut SplitMix64, channels: usize, side: usize, n_bumps: usize) -> Pattern {
    let mut bumps = Vec::with_capacity(n_bumps);
    for _ in 0..n_bumps {
        let cx = (0.15 + 0.7 * rng.next_f64()) * side as f64;
        let cy = (0.15 + 0.7 * rng.next_f64()) * side as f64;
        let sigma = (0.08 + 0.12 * rng.next_f64()) * side as f64;
        let amp = 0.5 + 0.5 * rng.next_f64();
        let ch_mult: Vec<f64> = (0..channels).map(|_| 0.3 + 0.7 * rng.next_f64()).collect();
        bumps.push((cx, cy, sigma, amp, ch_mult));
    }
    let mut field = vec![0.0f64; channels * side * side];
    let mut peak = 0.0f64;
    for ch in 0..channels {
        for y in 0..side {
            for x in 0..side {
                let mut v = 0.0;
                for (cx, cy, sigma, amp, ch_mult) in &bumps {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    v += amp * ch_mult[ch] * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                }
                field[(ch * side + y) * side + x] = v;
                peak = peak.max(v);
            }
        }
    }
    if peak > 0.0 {
        for v in &mut field {
            *v /= peak;
        }
    }
    Pattern { field }
}

/// Head mode: strong core, mild variant. Rare modes: weak core, dominant variant.
const HEAD_CORE: f64 = 1.0;
const HEAD_VARIANT: f64 = 0.35;
const TAIL_VARIANT: f64 = 1.0;

pub fn synth_images(spec: &ImageSynthSpec, split: Split) -> Result<Dataset> {
    if spec.classes < 2 || spec.channels == 0 || spec.side < 4 {
        return Err(Error::config("image synth needs >= 2 classes, >= 1 channel, side >= 4"));
    }
    if spec.modes_per_class == 0 || spec.mode_weights.len() != spec.modes_per_class {
        return Err(Error::config("mode_weights length must equal modes_per_class"));
    }
    let weight_sum: f64 = spec.mode_weights.iter().sum();
    if weight_sum <= 0.0 {
        return Err(Error::config("mode weights must sum to > 0"));
    }

    // Patterns depend on the seed only, never on the split or example count, so
    // train and test draw from one distribution.
    let mut pattern_rng = SplitMix64::new(derive_seed(spec.seed, 0x8EED));
    let cores: Vec<Pattern> = (0..spec.classes)
        .map(|_| bump_pattern(&mut pattern_rng, spec.channels, spec.side, 3))
        .collect();
    let variants: Vec<Vec<Pattern>> = (0..spec.classes)
        .map(|_| {
            (0..spec.modes_per_class)
                .map(|_| bump_pattern(&mut pattern_rng, spec.channels, spec.side, 3))
                .collect()
        })
        .collect();

    let stream = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = SplitMix64::new(derive_seed(spec.seed, stream));
    let side = spec.side;
    let plane = side * side;
    let mut examples = Vec::with_capacity(spec.n_examples);
    for i in 0..spec.n_examples {
        let class = i % spec.classes;
        let mode = {
            let draw = rng.next_f64() * weight_sum;
            let mut acc = 0.0;
            let mut picked = spec.modes_per_class - 1;
            for (k, &w) in spec.mode_weights.iter().enumerate() {
                acc += w;
                if draw < acc {
                    picked = k;
                    break;
                }
            }
            picked
        };
        let (core_w, var_w) = if mode == 0 {
            (HEAD_CORE, HEAD_VARIANT)
        } else {
            (spec.tail_core_strength, TAIL_VARIANT)
        };
        let variant_pattern: &Pattern = if mode == 0 {
            &variants[class][0]
        } else {
            // Confuser: the dominant pattern belongs to another class.
            &cores[(class + mode) % spec.classes]
        };
        let shift_range = 2 * spec.max_shift as u64 + 1;
        let dx = rng.next_below(shift_range) as isize - spec.max_shift as isize;
        let dy = rng.next_below(shift_range) as isize - spec.max_shift as isize;

        let core = &cores[class].field;
        let variant = &variant_pattern.field;
        let mut pixels = vec![0.0f32; spec.channels * plane];
        for ch in 0..spec.channels {
            for y in 0..side {
                for x in 0..side {
                    let sx = x as isize - dx;
                    let sy = y as isize - dy;
                    let base = if sx >= 0 && (sx as usize) < side && sy >= 0 && (sy as usize) < side {
                        let idx = (ch * side + sy as usize) * side + sx as usize;
                        core_w * core[idx] + var_w * variant[idx]
                    } else {
                        0.0
                    };
                    let noisy = base / (core_w + var_w) + rng.next_gaussian() * spec.noise_sigma;
                    pixels[(ch * side + y) * side + x] = noisy.clamp(0.0, 1.0) as f32;
                }
            }
        }
        examples.push(Example {
            id: i as u64,
            pixels,
            observed_label: class,
            original_label: class,
            corrupted: false,
        });
    }

    let input_shape = if spec.channels == 1 {
        vec![plane]
    } else {
        vec![spec.channels, side, side]
    };
    Ok(Dataset {
        input_shape,
        classes: spec.classes,
        split,
        examples,
        provenance: vec![
            ("source".into(), "synth-images".into()),
            ("seed".into(), spec.seed.to_string()),
            ("split".into(), split.as_str().into()),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longtail_is_deterministic() {
        let spec = LongtailSpec {
            n_head_classes: 4,
            head_examples_per_class: 10,
            tail_cluster_sizes: vec![1, 2, 3],
            dim: 8,
            noise_sigma: 0.02,
            seed: 5,
        };
        let a = synth_longtail(&spec).unwrap();
        let b = synth_longtail(&spec).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.len(), 4 * 10 + 6);
        a.check_invariants().unwrap();
    }

    #[test]
    fn longtail_singleton_exists() {
        let spec = LongtailSpec {
            n_head_classes: 3,
            head_examples_per_class: 5,
            tail_cluster_sizes: vec![4, 1, 2],
            dim: 4,
            noise_sigma: 0.01,
            seed: 9,
        };
        let ds = synth_longtail(&spec).unwrap();
        // Tail clusters start after the head block; sizes [4, 1, 2] put the
        // singleton at offset 4, with the deranged label (1 + 1) % 3.
        let singleton = &ds.examples[15 + 4];
        assert_eq!(singleton.original_label, 2);
    }

    #[test]
    fn longtail_rejects_bad_dim() {
        let spec = LongtailSpec {
            n_head_classes: 2,
            head_examples_per_class: 2,
            tail_cluster_sizes: vec![],
            dim: 1,
            noise_sigma: 0.1,
            seed: 0,
        };
        assert!(synth_longtail(&spec).is_err());
    }

    #[test]
    fn images_deterministic_and_balanced() {
        let spec = ImageSynthSpec::grayscale(12, 40, 3);
        let a = synth_images(&spec, Split::Train).unwrap();
        let b = synth_images(&spec, Split::Train).unwrap();
        assert_eq!(a.examples, b.examples);
        for c in 0..10 {
            assert_eq!(a.examples.iter().filter(|e| e.original_label == c).count(), 4);
        }
        for e in &a.examples {
            for &p in &e.pixels {
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn train_and_test_streams_differ() {
        let spec = ImageSynthSpec::grayscale(12, 20, 3);
        let train = synth_images(&spec, Split::Train).unwrap();
        let test = synth_images(&spec, Split::Test).unwrap();
        assert_ne!(train.examples[0].pixels, test.examples[0].pixels);
    }

    #[test]
    fn rgb_images_have_chw_shape() {
        let spec = ImageSynthSpec::rgb(16, 10, 1);
        let ds = synth_images(&spec, Split::Train).unwrap();
        assert_eq!(ds.input_shape, vec![3, 16, 16]);
        ds.check_invariants().unwrap();
    }
}
