#![no_main]

use libfuzzer_sys::fuzz_target;
use spdbci::synthetic::SyntheticSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = SyntheticSpec::parse(text) {
        spec.validate().expect("parsed specs are valid");
    }
});
