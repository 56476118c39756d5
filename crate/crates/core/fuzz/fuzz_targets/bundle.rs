#![no_main]

use libfuzzer_sys::fuzz_target;
use spdbci::io::{model_from_bytes, model_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = model_from_bytes(data) {
        assert_eq!(model_to_bytes(&model), data);
    }
});
