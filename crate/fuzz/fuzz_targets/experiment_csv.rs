#![no_main]

use libfuzzer_sys::fuzz_target;
use longrun_core::io::{read_experiment_csv, write_experiment_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = read_experiment_csv(data) {
        let mut out = Vec::new();
        write_experiment_csv(&ds, &mut out).unwrap();
        let back = read_experiment_csv(out.as_slice()).unwrap();
        assert_eq!(back.rows().len(), ds.rows().len());
        assert_eq!(back.feature_names(), ds.feature_names());
    }
});
