#![no_main]

use libfuzzer_sys::fuzz_target;

// CIFAR-10 binary records: 1 label byte + 3072 pixel bytes per record.
fuzz_target!(|data: &[u8]| {
    let _ = turnover::data::parse_cifar10(data);
});
