#![no_main]

use libfuzzer_sys::fuzz_target;

// Model checkpoints are length-prefixed binary with a trailing digest; the
// parser must reject malformed input without panicking or over-allocating.
fuzz_target!(|data: &[u8]| {
    let _ = turnover::model_io::parse_model(data);
});
