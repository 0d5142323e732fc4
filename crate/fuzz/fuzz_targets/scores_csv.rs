#![no_main]

use libfuzzer_sys::fuzz_target;
use longrun_core::io::{read_scores_csv, write_scores_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(scores) = read_scores_csv(data) {
        let mut out = Vec::new();
        write_scores_csv(&scores, &mut out).unwrap();
        assert_eq!(read_scores_csv(out.as_slice()).unwrap(), scores);
    }
});
