//! Input is `schema TOML, NUL, CSV text`; without a NUL the bytes are read
//! as CSV against a fixed mixed schema.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mfamd::{read_csv, LoadOptions, Schema, VariableSpec};

fuzz_target!(|data: &[u8]| {
    let (schema, csv) = match data.iter().position(|&b| b == 0) {
        Some(k) => match std::str::from_utf8(&data[..k]).ok().and_then(|s| Schema::parse(s).ok()) {
            Some(schema) => (schema, &data[k + 1..]),
            None => return,
        },
        None => (
            Schema::new(vec![
                VariableSpec::continuous("x"),
                VariableSpec::binary("b", ["0", "1"]),
                VariableSpec::nominal("n", &["a", "b", "c"]),
            ]),
            data,
        ),
    };
    for options in [
        LoadOptions::default(),
        LoadOptions {
            max_missing_per_categorical: Some(0),
            drop_unobserved_levels: false,
        },
    ] {
        if let Ok(loaded) = read_csv(csv, &schema, &options) {
            let ds = loaded.dataset;
            let mut out = Vec::new();
            ds.write_csv(&mut out).expect("write");
            let back = read_csv(
                &out[..],
                &ds.written_schema(),
                &LoadOptions {
                    drop_unobserved_levels: false,
                    ..options
                },
            )
            .expect("re-read");
            assert_eq!(back.dataset.n_obs(), ds.n_obs());
        }
    }
});
