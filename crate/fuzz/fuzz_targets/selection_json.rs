#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(sel) = sa_core::SampleSelection::from_json(text) {
            sel.check_parent(sel.parent_len).unwrap();
        }
    }
});
