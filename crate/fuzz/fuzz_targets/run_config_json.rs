#![no_main]

use libfuzzer_sys::fuzz_target;
use marketron::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = RunConfig::from_json_slice(data) {
        assert!(cfg.validate().is_ok());
        let json = serde_json::to_vec(&cfg).unwrap();
        assert!(RunConfig::from_json_slice(&json).is_ok());
    }
});
