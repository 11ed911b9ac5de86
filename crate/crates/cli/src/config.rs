//! Run configuration: one TOML file, overridden by environment variables and
//! then by command-line flags.

use std::path::{Path, PathBuf};

use mfamd::model::{AllocationMode, Execution};
use mfamd::varsel::VarSelConfig;
use mfamd::{FitConfig, LoadOptions, PhaseSchedule, PriorSettings, SamplerOptions};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENV_OUTPUT_DIR: &str = "MFAMD_OUTPUT_DIR";
pub const ENV_WORKERS: &str = "MFAMD_WORKERS";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Truth sidecar (`id, cluster`) used by `diagnose` to score agreement.
    pub truth: Option<PathBuf>,
    pub load: LoadOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub groups: Vec<usize>,
    pub factors: Vec<usize>,
    pub priors: PriorSettings,
    pub schedule: PhaseSchedule,
    pub varsel: VarSelConfig,
    pub allocation: AllocationMode,
    /// Observations per RNG stream when not in sequential mode.
    pub chunk: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            groups: vec![1, 2, 3],
            factors: vec![1, 2, 3],
            priors: PriorSettings::default(),
            schedule: PhaseSchedule::default(),
            varsel: VarSelConfig::default(),
            allocation: AllocationMode::default(),
            chunk: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    /// Divide continuous residuals by ψ instead of √ψ.
    pub divide_residuals_by_psi: bool,
    pub fuzzy: bool,
    pub warm_start: bool,
    /// Single-threaded, bit-reproducible sweeps.
    pub sequential: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub standardize: bool,
    /// Merge a genotype's rare homozygous level when its count is below this
    /// fraction of N.
    pub merge_threshold: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            standardize: true,
            merge_threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Ground-truth model file; the built-in recovery scenario when absent.
    pub truth_model: Option<PathBuf>,
    pub n_obs: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            truth_model: None,
            n_obs: mfamd::simulate::RECOVERY_N,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Directory written by `fit`, or the `best` directory of `select`.
    pub fit_dir: Option<PathBuf>,
    /// Latent cells whose mean residual exceeds this are flagged.
    pub flag_threshold: f64,
    /// Observations exported to the long residual tables; all when absent.
    pub max_residual_rows: Option<usize>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            fit_dir: None,
            flag_threshold: 2.0,
            max_residual_rows: None,
        }
    }
}

/// Contents of the config file. Every field is optional here; [`Overrides`]
/// are layered on top and [`RunConfig::resolve`] checks the result.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Sweeps between heartbeat lines; 0 disables them.
    pub heartbeat_every: Option<u64>,
    pub input: InputConfig,
    pub model: ModelConfig,
    pub flags: Flags,
    pub preprocess: PreprocessConfig,
    pub simulate: SimulateConfig,
    pub diagnose: DiagnoseConfig,
}

/// Values taken from the environment or the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub truth_model: Option<PathBuf>,
    pub fit_dir: Option<PathBuf>,
    pub groups: Option<Vec<usize>>,
    pub factors: Option<Vec<usize>>,
    pub divide_residuals_by_psi: bool,
    pub fuzzy: bool,
    pub warm_start: bool,
    pub sequential: bool,
}

impl Overrides {
    /// Reads the supported environment variables.
    pub fn from_env() -> Result<Self, CliError> {
        let mut o = Overrides::default();
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            if !dir.is_empty() {
                o.output_dir = Some(dir.into());
            }
        }
        if let Ok(w) = std::env::var(ENV_WORKERS) {
            let n = w
                .parse()
                .map_err(|_| CliError::Config(format!("{ENV_WORKERS}: `{w}` is not a worker count")))?;
            o.workers = Some(n);
        }
        Ok(o)
    }

    /// Layers `self` over `lower`: values set here win.
    pub fn over(self, lower: Overrides) -> Overrides {
        Overrides {
            seed: self.seed.or(lower.seed),
            output_dir: self.output_dir.or(lower.output_dir),
            workers: self.workers.or(lower.workers),
            data: self.data.or(lower.data),
            schema: self.schema.or(lower.schema),
            truth: self.truth.or(lower.truth),
            truth_model: self.truth_model.or(lower.truth_model),
            fit_dir: self.fit_dir.or(lower.fit_dir),
            groups: self.groups.or(lower.groups),
            factors: self.factors.or(lower.factors),
            divide_residuals_by_psi: self.divide_residuals_by_psi || lower.divide_residuals_by_psi,
            fuzzy: self.fuzzy || lower.fuzzy,
            warm_start: self.warm_start || lower.warm_start,
            sequential: self.sequential || lower.sequential,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies overrides and checks every field that all commands share.
    pub fn resolve(mut self, o: Overrides) -> Result<Resolved, CliError> {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = Some(v);
                }
            };
        }
        set!(self.seed, o.seed);
        set!(self.output_dir, o.output_dir);
        set!(self.workers, o.workers);
        set!(self.input.data, o.data);
        set!(self.input.schema, o.schema);
        set!(self.input.truth, o.truth);
        set!(self.simulate.truth_model, o.truth_model);
        set!(self.diagnose.fit_dir, o.fit_dir);
        if let Some(g) = o.groups {
            self.model.groups = g;
        }
        if let Some(q) = o.factors {
            self.model.factors = q;
        }
        self.flags.divide_residuals_by_psi |= o.divide_residuals_by_psi;
        self.flags.fuzzy |= o.fuzzy;
        self.flags.warm_start |= o.warm_start;
        self.flags.sequential |= o.sequential;

        let seed = self
            .seed
            .ok_or_else(|| CliError::Config("seed: required (set it in the config file or pass --seed)".into()))?;
        let output_dir = self.output_dir.clone().ok_or_else(|| {
            CliError::Config(format!(
                "output_dir: required (config file, {ENV_OUTPUT_DIR} or --output-dir)"
            ))
        })?;
        let workers = self.workers.unwrap_or(1);
        if workers == 0 {
            return Err(CliError::Config("workers: must be at least 1".into()));
        }
        let check_range = |name: &str, r: &[usize]| {
            if r.is_empty() {
                Err(CliError::Config(format!("model.{name}: range is empty")))
            } else if r.contains(&0) {
                Err(CliError::Config(format!("model.{name}: values must be at least 1")))
            } else {
                Ok(())
            }
        };
        check_range("groups", &self.model.groups)?;
        check_range("factors", &self.model.factors)?;
        if self.model.chunk == 0 {
            return Err(CliError::Config("model.chunk: must be positive".into()));
        }
        if let Some(t) = self.preprocess.merge_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Config(format!(
                    "preprocess.merge_threshold: {t} is not in [0, 1]"
                )));
            }
        }
        if self.simulate.n_obs == 0 {
            return Err(CliError::Config("simulate.n_obs: must be positive".into()));
        }
        if !(self.diagnose.flag_threshold > 0.0) {
            return Err(CliError::Config("diagnose.flag_threshold: must be positive".into()));
        }
        let probe = self.fit_config(self.model.groups[0], self.model.factors[0]);
        probe.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Resolved {
            seed,
            output_dir,
            workers,
            heartbeat_every: self.heartbeat_every.unwrap_or(100),
            config: self,
        })
    }

    pub fn sampler(&self) -> SamplerOptions {
        SamplerOptions {
            allocation: self.model.allocation,
            execution: if self.flags.sequential {
                Execution::Sequential
            } else {
                Execution::Parallel {
                    chunk: self.model.chunk,
                }
            },
            warm_start: self.flags.warm_start,
        }
    }

    pub fn fit_config(&self, groups: usize, factors: usize) -> FitConfig {
        FitConfig {
            groups,
            factors,
            priors: self.model.priors.clone(),
            schedule: self.model.schedule.clone(),
            varsel: VarSelConfig {
                fuzzy: self.model.varsel.fuzzy || self.flags.fuzzy,
                ..self.model.varsel.clone()
            },
            sampler: self.sampler(),
        }
    }
}

/// A checked configuration.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub heartbeat_every: u64,
    pub config: RunConfig,
}

impl Resolved {
    /// The settings that determine results, as canonical TOML. Output
    /// directory and worker count are left out: neither changes any output.
    pub fn canonical_toml(&self) -> String {
        let mut c = self.config.clone();
        c.output_dir = None;
        c.workers = None;
        c.seed = Some(self.seed);
        c.heartbeat_every = None;
        toml::to_string(&c).expect("config serializes")
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.config
            .input
            .data
            .as_deref()
            .ok_or_else(|| CliError::Config("input.data: required by this command".into()))
    }

    pub fn schema_path(&self) -> Result<&Path, CliError> {
        self.config
            .input
            .schema
            .as_deref()
            .ok_or_else(|| CliError::Config("input.schema: required by this command".into()))
    }

    pub fn single_cell(&self) -> Result<(usize, usize), CliError> {
        match (
            self.config.model.groups.as_slice(),
            self.config.model.factors.as_slice(),
        ) {
            ([g], [q]) => Ok((*g, *q)),
            _ => Err(CliError::Config(
                "model.groups / model.factors: fit needs exactly one value each (use select for a grid)".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_beats_env_beats_file() {
        let file = RunConfig::parse("seed = 1\noutput_dir = \"from_file\"\nworkers = 2\n").unwrap();
        let env = Overrides {
            output_dir: Some("from_env".into()),
            workers: Some(3),
            ..Default::default()
        };
        let cli = Overrides {
            output_dir: Some("from_cli".into()),
            ..Default::default()
        };
        let r = file.resolve(cli.over(env)).unwrap();
        assert_eq!(r.output_dir, PathBuf::from("from_cli"));
        assert_eq!(r.workers, 3);
        assert_eq!(r.seed, 1);
    }

    #[test]
    fn seed_is_mandatory() {
        let c = RunConfig::parse("output_dir = \"o\"\n").unwrap();
        let err = c.resolve(Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_field_is_named() {
        let err = RunConfig::parse("seed = 1\n[model]\ngroupz = [2]\n").unwrap_err();
        assert!(err.to_string().contains("groupz"), "{err}");
    }

    #[test]
    fn invalid_schedule_is_field_level() {
        let c = RunConfig::parse("seed = 1\noutput_dir = \"o\"\n[model.schedule]\nthin = 0\n").unwrap();
        let err = c.resolve(Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("schedule.thin"), "{err}");
    }

    #[test]
    fn empty_range_rejected() {
        let c = RunConfig::parse("seed = 1\noutput_dir = \"o\"\n[model]\ngroups = []\n").unwrap();
        assert!(c.resolve(Overrides::default()).is_err());
    }

    #[test]
    fn hash_input_ignores_output_dir() {
        let a = RunConfig::parse("seed = 5\noutput_dir = \"a\"\n").unwrap();
        let b = RunConfig::parse("seed = 5\noutput_dir = \"b\"\nworkers = 4\n").unwrap();
        let ra = a.resolve(Overrides::default()).unwrap();
        let rb = b.resolve(Overrides::default()).unwrap();
        assert_eq!(ra.canonical_toml(), rb.canonical_toml());
    }

    #[test]
    fn flags_reach_fit_config() {
        let c = RunConfig::parse("seed = 1\noutput_dir = \"o\"\n[flags]\nfuzzy = true\nsequential = true\n").unwrap();
        let r = c.resolve(Overrides::default()).unwrap();
        let f = r.config.fit_config(2, 1);
        assert!(f.varsel.fuzzy);
        assert_eq!(f.sampler.execution, Execution::Sequential);
    }
}
