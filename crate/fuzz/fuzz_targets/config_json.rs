#![no_main]

use ctgp::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        // anything accepted must survive a round trip
        assert_eq!(ExperimentConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }
});
