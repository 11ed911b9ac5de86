//! Input is `manifest TOML, NUL`, then column files each framed by a
//! little-endian u32 length.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mfamd::store::{decode, decode_f64, decode_u32, decode_u64, StoreManifest};

fuzz_target!(|data: &[u8]| {
    let Some(k) = data.iter().position(|&b| b == 0) else {
        let _ = decode_f64(data, data.len() / 8);
        let _ = decode_u32(data, data.len() / 4);
        let _ = decode_u64(data, data.len() / 8 + 1);
        return;
    };
    let Some(manifest) = std::str::from_utf8(&data[..k])
        .ok()
        .and_then(|s| StoreManifest::parse(s).ok())
    else {
        return;
    };
    let mut rest = &data[k + 1..];
    let mut files = Vec::new();
    while rest.len() >= 4 {
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        rest = &rest[4..];
        let take = len.min(rest.len());
        files.push(rest[..take].to_vec());
        rest = &rest[take..];
    }
    let _ = decode(&manifest, &files);
});
