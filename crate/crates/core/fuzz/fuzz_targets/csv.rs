#![no_main]

use libfuzzer_sys::fuzz_target;
use spdbci::io::parse_csv_trial;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((channels, samples, values)) = parse_csv_trial(text) {
        assert_eq!(values.len(), channels * samples);
        assert!(values.iter().all(|v| v.is_finite()));
    }
});
