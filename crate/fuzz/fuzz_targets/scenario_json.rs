#![no_main]

use libfuzzer_sys::fuzz_target;
use longrun_core::io::{parse_scenario, scenario_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = parse_scenario(text) {
        // Anything accepted must survive a write and re-read.
        let again = scenario_json(&file).expect("accepted scenario serializes");
        parse_scenario(&again).expect("serialized scenario parses");
    }
});
