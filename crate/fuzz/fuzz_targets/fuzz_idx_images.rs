#![no_main]

use libfuzzer_sys::fuzz_target;

// The IDX image parser must never panic on arbitrary input; it may return Err.
fuzz_target!(|data: &[u8]| {
    let _ = turnover::data::parse_idx_images(data);
});
