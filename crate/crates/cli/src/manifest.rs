//! Per-command manifest and the output directory it describes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const RUN_MANIFEST: &str = "run_manifest.toml";
pub const TIMINGS: &str = "timings.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Versions {
    pub tool: String,
    pub library: String,
    pub sample_store: u32,
}

/// Written last by every command. Wall-clock timings go to a sibling file so
/// that reruns produce identical manifests.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub seed: String,
    pub config_sha256: String,
    pub versions: Versions,
    pub timings: String,
    pub complete: bool,
    /// Command-specific results, such as the chosen model.
    #[serde(default)]
    pub summary: BTreeMap<String, String>,
    #[serde(rename = "input", default)]
    pub inputs: Vec<FileEntry>,
    #[serde(rename = "output", default)]
    pub outputs: Vec<FileEntry>,
    /// The resolved configuration the hash was computed from.
    pub config: String,
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{RUN_MANIFEST}: {e}")))
    }
}

#[derive(Debug, Serialize)]
struct Timings {
    total_seconds: f64,
    steps: BTreeMap<String, f64>,
}

/// Tracks everything a command writes below its output directory.
pub struct OutputDir {
    root: PathBuf,
    protected: Vec<PathBuf>,
    inputs: Vec<FileEntry>,
    outputs: BTreeMap<String, String>,
    steps: BTreeMap<String, f64>,
    started: Instant,
}

impl OutputDir {
    /// Creates the directory. Writing over any of `inputs` is refused.
    pub fn create(root: &Path, inputs: &[&Path]) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let stale = root.join(RUN_MANIFEST);
        if stale.exists() {
            std::fs::remove_file(&stale).map_err(|e| CliError::io(&stale, e))?;
        }
        let mut out = OutputDir {
            root: root.to_path_buf(),
            protected: Vec::new(),
            inputs: Vec::new(),
            outputs: BTreeMap::new(),
            steps: BTreeMap::new(),
            started: Instant::now(),
        };
        for &p in inputs {
            out.add_input(p)?;
        }
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Hashes an input file and protects it from being overwritten.
    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        if let Ok(c) = path.canonicalize() {
            self.protected.push(c);
        }
        Ok(())
    }

    fn target(&self, rel: &str) -> Result<PathBuf, CliError> {
        let rel_path = Path::new(rel);
        if rel_path.is_absolute()
            || rel_path
                .components()
                .any(|c| matches!(c, std::path::Component::ParentDir))
        {
            return Err(CliError::Config(format!("output `{rel}` escapes the output directory")));
        }
        let path = self.root.join(rel_path);
        if let Ok(c) = path.canonicalize() {
            if self.protected.contains(&c) {
                return Err(CliError::Config(format!(
                    "refusing to overwrite input {} (choose another output_dir)",
                    path.display()
                )));
            }
        }
        Ok(path)
    }

    /// Writes `bytes` to `rel` under the root and records its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.target(rel)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Renders with `f` into memory, then [`OutputDir::write`]s.
    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> mfamd::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    /// Records files produced by someone else under `rel`, e.g. a sample store.
    pub fn record_dir(&mut self, rel: &str) -> Result<(), CliError> {
        let dir = self.target(rel)?;
        let mut names: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in names {
            let path = dir.join(&name);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            self.outputs.insert(format!("{rel}/{name}"), sha256_hex(&bytes));
        }
        Ok(())
    }

    /// Directory for an external writer; checked like a file target.
    pub fn subdir(&self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.target(rel)?;
        std::fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn time_step<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        *self.steps.entry(name.to_string()).or_default() += t.elapsed().as_secs_f64();
        v
    }

    /// Writes the timings file and then the manifest, which marks the run
    /// complete.
    pub fn finish(
        mut self,
        command: &str,
        seed: u64,
        config_toml: &str,
        summary: BTreeMap<String, String>,
    ) -> Result<RunManifest, CliError> {
        let timings = Timings {
            total_seconds: self.started.elapsed().as_secs_f64(),
            steps: std::mem::take(&mut self.steps),
        };
        let text = toml::to_string(&timings).expect("timings serialize");
        let path = self.target(TIMINGS)?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;

        let manifest = RunManifest {
            command: command.to_string(),
            seed: seed.to_string(),
            config_sha256: sha256_hex(config_toml.as_bytes()),
            versions: Versions {
                tool: env!("CARGO_PKG_VERSION").to_string(),
                library: mfamd::VERSION.to_string(),
                sample_store: mfamd::store::VERSION,
            },
            timings: TIMINGS.to_string(),
            complete: true,
            summary,
            inputs: self.inputs,
            outputs: self
                .outputs
                .into_iter()
                .map(|(path, sha256)| FileEntry { path, sha256 })
                .collect(),
            config: config_toml.to_string(),
        };
        let text = toml::to_string(&manifest).expect("manifest serializes");
        let path = self.root.join(RUN_MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
