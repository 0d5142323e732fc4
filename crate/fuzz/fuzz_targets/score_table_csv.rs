#![no_main]

use std::collections::BTreeSet;

use libfuzzer_sys::fuzz_target;
use longrun_core::harness::ScoreTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = ScoreTable::read_csv(data, &BTreeSet::new()) {
        assert!(table.default_score.is_finite());
        let mut out = Vec::new();
        table.write_csv(&mut out).unwrap();
        let back = ScoreTable::read_csv(out.as_slice(), &BTreeSet::new()).unwrap();
        assert_eq!(back.scores, table.scores);
    }
});
