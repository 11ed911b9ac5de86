#![no_main]

use libfuzzer_sys::fuzz_target;
use mfamd::Schema;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(schema) = Schema::parse(s) {
            // Whatever parses must survive a round trip.
            let again = Schema::parse(&schema.to_toml_string()).expect("round trip");
            assert_eq!(again, schema);
        }
    }
});
