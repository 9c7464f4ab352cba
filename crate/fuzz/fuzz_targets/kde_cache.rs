#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = sa_core::KdeModel::from_cache_bytes(data) {
        let q = ndarray::Array2::<f64>::zeros((1, model.input_dim()));
        let _ = model.log_density(q.view());
    }
});
