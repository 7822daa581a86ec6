#![no_main]

use ctgp::io::LearnedParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = LearnedParams::parse(data);
});
