#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = text.parse::<sa_core::sampling::SamplingSpec>() {
            let again: sa_core::sampling::SamplingSpec = spec.to_string().parse().unwrap();
            assert_eq!(again, spec);
        }
    }
});
