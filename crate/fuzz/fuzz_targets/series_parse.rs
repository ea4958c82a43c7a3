#![no_main]

//! Plot-series parser robustness: no panics, and accepted rows re-emit to
//! an equivalent file.

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = cfthp::sweep::parse_series(text) {
            let mut out = String::new();
            for (a, b, c) in &rows {
                out.push_str(&format!("{a} {b} {c}\n"));
            }
            let reparsed = cfthp::sweep::parse_series(&out).expect("re-emitted series must parse");
            assert_eq!(reparsed, rows, "round trip changed the series");
        }
    }
});
