#![no_main]

use libfuzzer_sys::fuzz_target;
use marketron::rbf::{read_dump, write_dump};

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = read_dump(data) {
        assert_eq!(write_dump(&d), data);
    }
});
