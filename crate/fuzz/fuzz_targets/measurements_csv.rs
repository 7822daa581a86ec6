#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = ctgp::io::read_measurements(data, 1e-4, 1e-4);
});
