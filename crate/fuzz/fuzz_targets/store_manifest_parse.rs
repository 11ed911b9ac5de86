#![no_main]

use libfuzzer_sys::fuzz_target;
use mfamd::store::StoreManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(m) = StoreManifest::parse(s) {
            let _ = m.seed();
        }
    }
});
