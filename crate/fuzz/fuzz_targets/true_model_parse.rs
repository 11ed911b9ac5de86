#![no_main]

use libfuzzer_sys::fuzz_target;
use mfamd::simulate::{generate, TrueModel};
use rand::SeedableRng;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(tm) = TrueModel::parse(s) {
            // A validated model must simulate without panicking.
            if tm.variables.len() <= 64 && tm.factors <= 16 && tm.groups() <= 16 {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
                let _ = generate(&tm, 8, &mut rng);
            }
        }
    }
});
