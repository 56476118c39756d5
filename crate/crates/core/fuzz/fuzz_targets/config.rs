#![no_main]

use libfuzzer_sys::fuzz_target;
use spdbci::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = TrainConfig::parse(text) {
        let again = TrainConfig::parse(&config.to_text()).expect("printed config parses");
        assert_eq!(again, config);
    }
});
