#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = sa_core::io::csv::read_matrix(data, false);
    let _ = sa_core::io::csv::read_matrix(data, true);
});
