//! Replays the checked-in fuzz seeds through the same entry points the fuzz
//! targets drive, so the corpus stays meaningful on a stable toolchain.

use std::path::PathBuf;

use mfamd::simulate::{generate, TrueModel};
use mfamd::store::{decode, decode_f64, StoreManifest};
use mfamd::{read_csv, LoadOptions, Schema};
use rand::SeedableRng;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn split_nul(data: &[u8]) -> (&str, &[u8]) {
    let k = data.iter().position(|&b| b == 0).expect("framed seed");
    (std::str::from_utf8(&data[..k]).unwrap(), &data[k + 1..])
}

#[test]
fn schema_seeds() {
    for (name, data) in seeds("schema_parse") {
        let parsed = Schema::parse(std::str::from_utf8(&data).unwrap());
        match name.as_str() {
            "recovery.toml" | "minimal.toml" => {
                let schema = parsed.unwrap();
                assert_eq!(Schema::parse(&schema.to_toml_string()).unwrap(), schema);
            }
            _ => assert!(parsed.is_err(), "{name} should be rejected"),
        }
    }
}

#[test]
fn csv_seeds() {
    for (name, data) in seeds("csv_read") {
        let (schema, csv) = split_nul(&data);
        let schema = Schema::parse(schema).unwrap();
        let loaded = read_csv(csv, &schema, &LoadOptions::default());
        match name.as_str() {
            "unknown_level" => assert!(loaded.is_err(), "{name}"),
            _ => {
                let ds = loaded.unwrap().dataset;
                let mut out = Vec::new();
                ds.write_csv(&mut out).unwrap();
                let back = read_csv(&out[..], &ds.written_schema(), &LoadOptions::default()).unwrap();
                assert_eq!(back.dataset.n_obs(), ds.n_obs(), "{name}");
            }
        }
    }
}

#[test]
fn true_model_seeds() {
    for (name, data) in seeds("true_model_parse") {
        let parsed = TrueModel::parse(std::str::from_utf8(&data).unwrap());
        if name == "recovery.toml" {
            let tm = parsed.unwrap();
            let sim = generate(&tm, 8, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(sim.dataset.n_obs(), 8);
        } else {
            assert!(parsed.is_err(), "{name} should be rejected");
        }
    }
}

#[test]
fn store_manifest_seeds() {
    for (name, data) in seeds("store_manifest_parse") {
        let parsed = StoreManifest::parse(std::str::from_utf8(&data).unwrap());
        assert_eq!(parsed.is_ok(), name == "small.toml", "{name}");
    }
}

#[test]
fn store_decode_seeds() {
    for (name, data) in seeds("store_decode") {
        if !data.contains(&0) {
            // Unframed input goes straight to the column decoders.
            assert!(decode_f64(&data, data.len() / 8 + 1).is_err(), "{name}");
            assert_eq!(decode_f64(&data, data.len() / 8).unwrap().len(), data.len() / 8);
            continue;
        }
        let (manifest, mut rest) = split_nul(&data);
        let manifest = StoreManifest::parse(manifest).unwrap();
        let mut files = Vec::new();
        while rest.len() >= 4 {
            let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
            rest = &rest[4..];
            let take = len.min(rest.len());
            files.push(rest[..take].to_vec());
            rest = &rest[take..];
        }
        let decoded = decode(&manifest, &files);
        assert_eq!(decoded.is_ok(), name == "small", "{name}");
    }
    assert!(decode_f64(&[0; 7], 1).is_err());
}
