#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = turnover::report::parse_dynamics_csv(text);
        let _ = turnover::report::parse_gradstats_csv(text);
        let _ = turnover::report::parse_subnet_csv(text);
        let _ = turnover::report::parse_loo_csv(text);
    }
});
