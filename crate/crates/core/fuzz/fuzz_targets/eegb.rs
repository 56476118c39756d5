#![no_main]

use libfuzzer_sys::fuzz_target;
use spdbci::io::{trials_from_bytes, trials_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = trials_from_bytes(data) {
        // Accepted input is canonical: re-encoding reproduces it exactly.
        assert_eq!(trials_to_bytes(&set), data);
    }
});
