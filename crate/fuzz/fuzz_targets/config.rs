#![no_main]

use libfuzzer_sys::fuzz_target;
use oal_core::config::{parse_config, Settings};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(settings) = Settings::parse(text) {
        if let Ok(cfg) = parse_config(&settings) {
            assert!(!cfg.seeds.is_empty());
            cfg.validate().unwrap();
        }
    }
});
