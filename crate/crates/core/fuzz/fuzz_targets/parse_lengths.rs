#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(series) = poletree::ingest::parse_lengths_str(text) {
            for (_, s) in &series {
                // the fit must stay finite (or absent) on anything parsed
                if let Some(rate) = poletree::ingest::fit_growth_rate(s) {
                    assert!(rate.is_finite());
                }
            }
        }
    }
});
