#![no_main]

use libfuzzer_sys::fuzz_target;
use longrun_core::io::{read_assignment_csv, write_assignment_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = read_assignment_csv(data) {
        let mut out = Vec::new();
        write_assignment_csv(&a, &mut out).unwrap();
        let back = read_assignment_csv(out.as_slice()).unwrap();
        assert_eq!(back.labels, a.labels);
    }
});
