#![no_main]

use libfuzzer_sys::fuzz_target;
use nspe_core::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // path references are refused without a base directory
        let _ = ExperimentConfig::from_json_str(text, None);
    }
});
