#![no_main]

use libfuzzer_sys::fuzz_target;
use mfamd_cli::{Overrides, RunConfig};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(config) = RunConfig::parse(s) {
            if let Ok(resolved) = config.resolve(Overrides::default()) {
                let _ = resolved.canonical_toml();
            }
        }
    }
});
