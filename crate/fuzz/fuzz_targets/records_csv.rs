#![no_main]

use groupdyn::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = io::read_records_csv(text) {
            for r in &records {
                let _ = r.to_survival();
            }
        }
    }
});
