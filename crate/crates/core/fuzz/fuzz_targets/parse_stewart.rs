#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // must never panic; round-trip whatever parses
        if let Ok(ds) = poletree::ingest::parse_stewart_str(text) {
            let json = ds.to_json().unwrap();
            let back = poletree::ingest::Dataset::from_json(&json).unwrap();
            assert_eq!(back.n_records(), ds.n_records());
        }
    }
});
