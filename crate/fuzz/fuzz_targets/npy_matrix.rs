#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = sa_core::io::npy::read_matrix(&mut &data[..]) {
        let mut out = Vec::new();
        sa_core::io::npy::write_matrix(&mut out, &m).unwrap();
        let back = sa_core::io::npy::read_matrix(&mut &out[..]).unwrap();
        assert_eq!(back.dim(), m.dim());
    }
});
