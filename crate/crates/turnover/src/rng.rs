//! Deterministic pseudo-randomness for the whole crate.
//!
//! Everything seeded in this crate (weight init, label corruption, subsampling,
//! shuffling, spatial masks) flows through the SplitMix64 generator below, so runs
//! are bit-reproducible across processes and platforms. No OS entropy is ever used.

/// SplitMix64 finalizer. Full-avalanche mixing of a 64-bit value.
///
/// Constants are the reference ones: increment 0x9E3779B97F4A7C15 (golden ratio),
/// multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with a stream label so independent consumers of one base seed
/// do not observe correlated sequences.
#[inline]
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix64(base ^ mix64(stream))
}

/// Minimal SplitMix64 stream generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53-bit precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound) by rejection; unbiased.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "next_below bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }

    /// Standard normal via Box-Muller (one value per call; the pair's second half
    /// is discarded to keep the consumption pattern simple and stable).
    pub fn next_gaussian(&mut self) -> f64 {
        loop {
            let u1 = self.next_f64();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let u2 = self.next_f64();
            let r = (-2.0 * u1.ln()).sqrt();
            return r * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            slice.swap(i, j);
        }
    }

    /// `n` distinct indices sampled from `0..len` without replacement, ascending.
    pub fn sample_indices(&mut self, len: usize, n: usize) -> Vec<usize> {
        assert!(n <= len);
        let mut all: Vec<usize> = (0..len).collect();
        // Partial Fisher-Yates: the first n slots end up holding the sample.
        for i in 0..n {
            let j = i + self.next_below((len - i) as u64) as usize;
            all.swap(i, j);
        }
        let mut picked = all[..n].to_vec();
        picked.sort_unstable();
        picked
    }
}
