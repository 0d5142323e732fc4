#![no_main]

use libfuzzer_sys::fuzz_target;
use longrun_core::gbdt::TreeEnsemble;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = TreeEnsemble::from_json(text) {
        // A checked model never indexes out of bounds.
        let x = vec![0.0; model.n_features()];
        let _ = model.predict(&x).unwrap();
        let _ = model.predict(&[]);
    }
});
