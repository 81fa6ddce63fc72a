#![no_main]

use libfuzzer_sys::fuzz_target;
use nspe_core::harness::config::{build_network, NetworkFile};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = NetworkFile::from_json_str(text) {
        if let Ok((network, _, _)) = build_network(&file) {
            let index = network.stacked_index();
            assert_eq!(index.len(), network.nodes().iter().map(|n| n.tasks.len()).sum::<usize>());
        }
    }
});
