#![no_main]

use groupdyn::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = io::read_badge_csv(text, 0, None);
        let _ = io::read_badge_csv(text, 1, Some(0.02));
    }
});
