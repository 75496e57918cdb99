#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ds) = poletree::ingest::Dataset::from_json(text) {
            // any dataset that decodes must re-encode
            let _ = ds.to_json().unwrap();
            let _ = ds.to_text();
        }
    }
});
