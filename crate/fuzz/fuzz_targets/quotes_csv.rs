#![no_main]

use libfuzzer_sys::fuzz_target;
use marketron::calibration::{filter_quotes, parse_quotes};

fuzz_target!(|data: &[u8]| {
    if let Ok(quotes) = parse_quotes(data) {
        for q in &quotes {
            assert!(q.validate().is_ok());
        }
        let n = quotes.len();
        assert!(filter_quotes(quotes, 1.05).len() <= n);
    }
});
