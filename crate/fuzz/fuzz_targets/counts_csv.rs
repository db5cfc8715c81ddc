#![no_main]

use groupdyn::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = io::read_counts_csv(text, 60.0);
    }
});
