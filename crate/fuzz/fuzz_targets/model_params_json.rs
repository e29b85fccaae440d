#![no_main]

use libfuzzer_sys::fuzz_target;
use marketron::model::{drifts, ModelParams};

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = ModelParams::from_json_slice(data) {
        assert!(p.validate().is_ok());
        let _ = drifts(p.state0(p.s_star), 0.0, &p);
    }
});
