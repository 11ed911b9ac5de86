//! Columnar on-disk store for posterior draws.
//!
//! A store is a directory holding `manifest.toml` and one little-endian binary
//! file per field, draws concatenated in order:
//!
//! | file            | type | per draw                              |
//! |-----------------|------|---------------------------------------|
//! | `iteration.u64` | u64  | 1                                     |
//! | `alloc.u32`     | u32  | N (0-based cluster labels)            |
//! | `pi.f64`        | f64  | G                                     |
//! | `loadings.f64`  | f64  | G × D × (Q+1), each matrix column-major |
//! | `psi.f64`       | f64  | D                                     |
//! | `theta.f64`     | f64  | Q × N column-major                    |
//! | `latent.f64`    | f64  | L × N column-major                    |
//! | `loglik.f64`    | f64  | 1                                     |
//!
//! Nothing in the store depends on wall-clock time, so identical runs write
//! byte-identical stores.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PhaseSchedule;
use crate::samples::{Draw, PosteriorSamples};

pub const FORMAT: &str = "mfamd-samples";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldInfo {
    pub name: String,
    pub file: String,
    pub dtype: String,
    /// Values per draw.
    pub per_draw: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub format: String,
    pub version: u32,
    pub n_obs: usize,
    pub groups: usize,
    pub factors: usize,
    pub latent_dim: usize,
    pub n_draws: usize,
    /// Decimal, since TOML integers stop at 2⁶³ − 1.
    pub seed: String,
    /// Names of the retained variables.
    pub retained: Vec<String>,
    pub active_dims: Vec<usize>,
    pub latent_dims: Vec<usize>,
    pub schedule: PhaseSchedule,
    #[serde(rename = "field")]
    pub fields: Vec<FieldInfo>,
}

fn expected_fields(n: usize, g: usize, q: usize, d: usize, l: usize) -> Vec<FieldInfo> {
    let f = |name: &str, dtype: &str, per_draw: usize| FieldInfo {
        name: name.into(),
        file: format!("{name}.{dtype}"),
        dtype: dtype.into(),
        per_draw,
    };
    vec![
        f("iteration", "u64", 1),
        f("alloc", "u32", n),
        f("pi", "f64", g),
        f("loadings", "f64", g * d * (q + 1)),
        f("psi", "f64", d),
        f("theta", "f64", q * n),
        f("latent", "f64", l * n),
        f("loglik", "f64", 1),
    ]
}

impl StoreManifest {
    pub fn new(samples: &PosteriorSamples, seed: u64, schedule: &PhaseSchedule, retained: Vec<String>) -> Self {
        StoreManifest {
            format: FORMAT.into(),
            version: VERSION,
            n_obs: samples.n_obs,
            groups: samples.groups,
            factors: samples.factors,
            latent_dim: samples.latent_dim,
            n_draws: samples.n_draws(),
            seed: seed.to_string(),
            retained,
            active_dims: samples.active_dims.clone(),
            latent_dims: samples.latent_dims.clone(),
            schedule: schedule.clone(),
            fields: expected_fields(
                samples.n_obs,
                samples.groups,
                samples.factors,
                samples.latent_dim,
                samples.latent_dims.len(),
            ),
        }
    }

    /// Parses and validates a manifest.
    pub fn parse(text: &str) -> Result<Self> {
        let m: StoreManifest = toml::from_str(text).map_err(|e| Error::Store(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .parse()
            .map_err(|_| Error::Store(format!("seed `{}` is not an unsigned integer", self.seed)))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Store(msg));
        if self.format != FORMAT || self.version != VERSION {
            return bad(format!("unsupported format {} v{}", self.format, self.version));
        }
        self.seed()?;
        if self.groups == 0 || self.factors == 0 || self.n_obs == 0 || self.latent_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        let sorted_within =
            |dims: &[usize]| dims.windows(2).all(|w| w[0] < w[1]) && dims.iter().all(|&d| d < self.latent_dim);
        if !sorted_within(&self.active_dims) || !sorted_within(&self.latent_dims) {
            return bad("latent dimension lists must be ascending and in range".into());
        }
        if self.latent_dims.iter().any(|d| !self.active_dims.contains(d)) {
            return bad("stored latent dimensions must be retained".into());
        }
        // Per-draw sizes must not overflow when multiplied out.
        let widths = self.factors.checked_add(1);
        let sizes = [
            self.n_obs,
            self.groups,
            widths.unwrap_or(usize::MAX),
            self.latent_dim,
            self.n_draws.max(1),
        ];
        if widths.is_none() || sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s)).is_none() {
            return bad("dimensions overflow".into());
        }
        let want = expected_fields(
            self.n_obs,
            self.groups,
            self.factors,
            self.latent_dim,
            self.latent_dims.len(),
        );
        if self.fields != want {
            return bad("field table does not match the dimensions".into());
        }
        Ok(())
    }
}

fn check_len(bytes: &[u8], width: usize, count: usize, what: &str) -> Result<()> {
    match count.checked_mul(width) {
        Some(n) if n == bytes.len() => Ok(()),
        _ => Err(Error::Store(format!(
            "{what}: expected {count} values of {width} bytes, found {} bytes",
            bytes.len()
        ))),
    }
}

pub fn decode_f64(bytes: &[u8], count: usize) -> Result<Vec<f64>> {
    check_len(bytes, 8, count, "f64 column")?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn decode_u32(bytes: &[u8], count: usize) -> Result<Vec<u32>> {
    check_len(bytes, 4, count, "u32 column")?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect())
}

pub fn decode_u64(bytes: &[u8], count: usize) -> Result<Vec<u64>> {
    check_len(bytes, 8, count, "u64 column")?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Encoded column files, in manifest field order.
pub fn encode(samples: &PosteriorSamples) -> Vec<Vec<u8>> {
    let mut cols = vec![Vec::new(); 8];
    let f64s = |out: &mut Vec<u8>, xs: &mut dyn Iterator<Item = f64>| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for d in &samples.draws {
        cols[0].extend_from_slice(&d.iteration.to_le_bytes());
        for &a in &d.alloc {
            cols[1].extend_from_slice(&a.to_le_bytes());
        }
        f64s(&mut cols[2], &mut d.pi.iter().copied());
        for lam in &d.loadings {
            f64s(&mut cols[3], &mut lam.iter().copied());
        }
        f64s(&mut cols[4], &mut d.psi.iter().copied());
        f64s(&mut cols[5], &mut d.theta.iter().copied());
        f64s(&mut cols[6], &mut d.latent.iter().copied());
        cols[7].extend_from_slice(&d.loglik.to_le_bytes());
    }
    cols
}

/// Rebuilds draws from a validated manifest and raw column files.
pub fn decode(manifest: &StoreManifest, files: &[Vec<u8>]) -> Result<PosteriorSamples> {
    manifest.validate()?;
    if files.len() != manifest.fields.len() {
        return Err(Error::Store("wrong number of column files".into()));
    }
    let k = manifest.n_draws;
    let per = |f: usize| manifest.fields[f].per_draw;
    let total = |f: usize| {
        per(f)
            .checked_mul(k)
            .ok_or_else(|| Error::Store("column size overflows".into()))
    };
    let iteration = decode_u64(&files[0], total(0)?)?;
    let alloc = decode_u32(&files[1], total(1)?)?;
    let pi = decode_f64(&files[2], total(2)?)?;
    let loadings = decode_f64(&files[3], total(3)?)?;
    let psi = decode_f64(&files[4], total(4)?)?;
    let theta = decode_f64(&files[5], total(5)?)?;
    let latent = decode_f64(&files[6], total(6)?)?;
    let loglik = decode_f64(&files[7], total(7)?)?;

    let (n, g, q, d) = (manifest.n_obs, manifest.groups, manifest.factors, manifest.latent_dim);
    if alloc.iter().any(|&a| a as usize >= g) {
        return Err(Error::Store("allocation label out of range".into()));
    }
    let l = manifest.latent_dims.len();
    let block = d * (q + 1);
    let draws = (0..k)
        .map(|s| Draw {
            iteration: iteration[s],
            alloc: alloc[s * n..(s + 1) * n].to_vec(),
            pi: pi[s * g..(s + 1) * g].to_vec(),
            loadings: (0..g)
                .map(|c| {
                    let start = (s * g + c) * block;
                    DMatrix::from_column_slice(d, q + 1, &loadings[start..start + block])
                })
                .collect(),
            psi: psi[s * d..(s + 1) * d].to_vec(),
            theta: DMatrix::from_column_slice(q, n, &theta[s * q * n..(s + 1) * q * n]),
            latent: DMatrix::from_column_slice(l, n, &latent[s * l * n..(s + 1) * l * n]),
            loglik: loglik[s],
        })
        .collect();
    Ok(PosteriorSamples {
        n_obs: n,
        groups: g,
        factors: q,
        latent_dim: d,
        active_dims: manifest.active_dims.clone(),
        latent_dims: manifest.latent_dims.clone(),
        draws,
    })
}

/// Writes the manifest and every column file into `dir`, creating it.
pub fn write_store(dir: &Path, samples: &PosteriorSamples, manifest: &StoreManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (field, bytes) in manifest.fields.iter().zip(encode(samples)) {
        let path = dir.join(&field.file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest.to_toml_string()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_store(dir: &Path) -> Result<(PosteriorSamples, StoreManifest)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = StoreManifest::parse(&text)?;
    let files = manifest
        .fields
        .iter()
        .map(|f| {
            let path = dir.join(&f.file);
            fs::read(&path).map_err(|e| Error::io(&path, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = decode(&manifest, &files)?;
    Ok((samples, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_samples(seed: u64) -> PosteriorSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, g, q, d) = (7, 3, 2, 5);
        let latent_dims = vec![3, 4];
        let draws = (0..4)
            .map(|s| Draw {
                iteration: 10 * s as u64,
                alloc: (0..n).map(|_| rng.random_range(0..g as u32)).collect(),
                pi: vec![0.2, 0.3, 0.5],
                loadings: (0..g)
                    .map(|_| DMatrix::from_fn(d, q + 1, |_, _| rng.random()))
                    .collect(),
                psi: (0..d).map(|_| rng.random()).collect(),
                theta: DMatrix::from_fn(q, n, |_, _| rng.random()),
                latent: DMatrix::from_fn(2, n, |_, _| rng.random()),
                loglik: -rng.random::<f64>() * 100.0,
            })
            .collect();
        PosteriorSamples {
            n_obs: n,
            groups: g,
            factors: q,
            latent_dim: d,
            active_dims: vec![0, 1, 3, 4],
            latent_dims,
            draws,
        }
    }

    #[test]
    fn round_trip() {
        let samples = random_samples(1);
        let manifest = StoreManifest::new(&samples, u64::MAX, &PhaseSchedule::short(), vec!["a".into()]);
        let dir = tempfile::tempdir().unwrap();
        write_store(dir.path(), &samples, &manifest).unwrap();
        let (back, m) = read_store(dir.path()).unwrap();
        assert_eq!(back, samples);
        assert_eq!(m, manifest);
        assert_eq!(m.seed().unwrap(), u64::MAX);
    }

    #[test]
    fn truncated_column_is_rejected() {
        let samples = random_samples(2);
        let manifest = StoreManifest::new(&samples, 1, &PhaseSchedule::short(), vec![]);
        let mut files = encode(&samples);
        files[3].pop();
        assert!(matches!(decode(&manifest, &files), Err(Error::Store(_))));
    }

    #[test]
    fn bad_labels_are_rejected() {
        let mut samples = random_samples(3);
        samples.draws[0].alloc[0] = 9;
        let manifest = StoreManifest::new(&samples, 1, &PhaseSchedule::short(), vec![]);
        assert!(decode(&manifest, &encode(&samples)).is_err());
    }

    #[test]
    fn manifest_validation() {
        let samples = random_samples(4);
        let manifest = StoreManifest::new(&samples, 1, &PhaseSchedule::short(), vec![]);
        let text = manifest.to_toml_string();
        assert_eq!(StoreManifest::parse(&text).unwrap(), manifest);
        assert!(StoreManifest::parse(&text.replace("n_obs = 7", "n_obs = 8")).is_err());
        assert!(StoreManifest::parse(&text.replace("version = 1", "version = 2")).is_err());
        assert!(StoreManifest::parse("garbage").is_err());
    }

    #[test]
    fn decoders_check_length() {
        assert_eq!(decode_u32(&[1, 0, 0, 0, 2, 0, 0, 0], 2).unwrap(), vec![1, 2]);
        assert!(decode_u32(&[1, 0, 0], 1).is_err());
        assert!(decode_f64(&[0; 8], usize::MAX).is_err());
        assert_eq!(decode_u64(&7u64.to_le_bytes(), 1).unwrap(), vec![7]);
    }
}
