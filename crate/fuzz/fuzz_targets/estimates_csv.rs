#![no_main]

use ctgp::io::{read_estimates, write_estimates};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(parsed) = read_estimates(data) else { return };
    let mut buf = Vec::new();
    write_estimates(&mut buf, &parsed).unwrap();
    assert_eq!(read_estimates(buf.as_slice()).unwrap(), parsed);
});
