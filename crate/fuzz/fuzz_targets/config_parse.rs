#![no_main]

//! Scenario-file parser robustness: must never panic, and anything it
//! accepts must survive a canonical-serialization round trip unchanged.

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = cfthp::config::parse_config_str(text) {
            let canonical = cfg.serialize();
            let reparsed = cfthp::config::parse_config_str(&canonical)
                .expect("canonical serialization must reparse");
            assert_eq!(reparsed, cfg, "round trip changed the config");
            assert_eq!(reparsed.serialize(), canonical);
            let _ = cfg.hash();
            let _ = cfg.validate();
        }
    }
});
