//! Cross-process mask determinism: the committed fixture must regenerate
//! bit-exactly, and the statistical mask properties must hold at scale.

use std::path::PathBuf;

use turnover::mask::{fixture_body, flip_unit, mask_for, spatial_mask_for, verify_fixture};
use turnover::rng::mix64;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mask_fixture.txt")
}

#[test]
fn committed_fixture_regenerates_bit_exactly() {
    verify_fixture(&fixture_path()).expect("committed mask fixture must match regeneration");
}

#[test]
fn flip_partition_over_sampled_keys() {
    // 10^5 sampled (key, bit) probes: flip(m) must complement m everywhere.
    let mut checked = 0usize;
    for i in 0..500u64 {
        let seed = mix64(i);
        let example = mix64(i ^ 0x51);
        let m = mask_for(seed, example, (i % 3) as usize, 200).unwrap();
        let f = flip_unit(&m);
        for u in 0..200 {
            assert!(m.bits.get(u) ^ f.bits.get(u), "key {i} unit {u}");
            checked += 1;
        }
    }
    assert!(checked >= 100_000);
}

#[test]
fn keep_rate_concentrates_at_width_1024() {
    // Binomial(1024, 1/2): fraction outside [0.45, 0.55] has probability ~1e-3;
    // at least 99% of sampled keys must fall inside.
    let samples = 2_000u64;
    let mut inside = 0usize;
    for i in 0..samples {
        let m = mask_for(mix64(i), i, 0, 1024).unwrap();
        let frac = m.bits.count_ones() as f64 / 1024.0;
        if (0.45..=0.55).contains(&frac) {
            inside += 1;
        }
    }
    let rate = inside as f64 / samples as f64;
    assert!(rate >= 0.99, "only {rate} of keys inside the band");
}

#[test]
fn spatial_masks_exactly_half_over_sampled_keys() {
    for i in 0..2_000u64 {
        for &channels in &[16usize, 17, 32] {
            let m = spatial_mask_for(mix64(i), i, 1, channels).unwrap();
            assert_eq!(m.channel_bits.count_ones(), channels.div_ceil(2));
        }
    }
}

/// Regenerates the fixture file. Run manually after an intentional hash change:
/// `cargo test -p turnover --test mask_determinism -- --ignored regenerate`
#[test]
#[ignore]
fn regenerate_fixture() {
    let body = fixture_body().unwrap();
    std::fs::create_dir_all(fixture_path().parent().unwrap()).unwrap();
    std::fs::write(fixture_path(), format!("{body}\n")).unwrap();
}
