#![no_main]

use libfuzzer_sys::fuzz_target;
use longrun_core::io::population_features;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(features) = population_features(text) {
        let d = features.values().next().map_or(0, Vec::len);
        assert!(features.values().all(|f| f.len() == d));
    }
});
