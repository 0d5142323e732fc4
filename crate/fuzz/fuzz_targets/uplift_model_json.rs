#![no_main]

use libfuzzer_sys::fuzz_target;
use longrun_core::uplift::{predict_uplift, UpliftModel};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = UpliftModel::from_json(text) {
        let x = vec![1.0; model.n_features()];
        predict_uplift(&model, &x).unwrap();
    }
});
