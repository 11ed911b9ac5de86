use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfamd_cli::config::{ENV_OUTPUT_DIR, ENV_WORKERS};
use mfamd_cli::{run, Command, Overrides};

/// Bayesian clustering of mixed continuous and categorical data.
///
/// Settings come from the config file, then the environment, then flags;
/// later sources win.
#[derive(Parser)]
#[command(name = "mfamd", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load, filter, merge rare genotype levels and standardize a dataset.
    Preprocess(Common),
    /// Draw a dataset with known clusters from a ground-truth model.
    Simulate(Common),
    /// Fit one (G, Q) model and write its posterior samples.
    Fit(Common),
    /// Fit a (G, Q) grid and keep the model with the best BIC-MCMC.
    Select(Common),
    /// Membership, residual and agreement tables for a finished fit.
    Diagnose(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = ENV_OUTPUT_DIR)]
    output_dir: Option<PathBuf>,
    /// Grid cells fitted concurrently.
    #[arg(long, env = ENV_WORKERS)]
    workers: Option<usize>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Truth sidecar scored by `diagnose`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Ground-truth model for `simulate`.
    #[arg(long)]
    truth_model: Option<PathBuf>,
    /// Fit directory read by `diagnose`.
    #[arg(long)]
    fit_dir: Option<PathBuf>,
    /// Comma-separated cluster counts.
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<usize>>,
    /// Comma-separated latent dimensions.
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<usize>>,
    /// Scale continuous residuals by ψ rather than √ψ.
    #[arg(long)]
    divide_residuals_by_psi: bool,
    /// Fuzzy variance ratios from membership probabilities.
    #[arg(long)]
    fuzzy: bool,
    /// Initialize allocations by k-means.
    #[arg(long)]
    warm_start: bool,
    /// Single-threaded sweeps with bit-reproducible output.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn split(self) -> (Option<PathBuf>, Overrides) {
        let o = Overrides {
            seed: self.seed,
            output_dir: self.output_dir,
            workers: self.workers,
            data: self.data,
            schema: self.schema,
            truth: self.truth,
            truth_model: self.truth_model,
            fit_dir: self.fit_dir,
            groups: self.groups,
            factors: self.factors,
            divide_residuals_by_psi: self.divide_residuals_by_psi,
            fuzzy: self.fuzzy,
            warm_start: self.warm_start,
            sequential: self.sequential,
        };
        (self.config, o)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Preprocess(c) => (Command::Preprocess, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Fit(c) => (Command::Fit, c),
        Cmd::Select(c) => (Command::Select, c),
        Cmd::Diagnose(c) => (Command::Diagnose, c),
    };
    let (config, overrides) = common.split();
    match run(command, config.as_deref(), overrides) {
        Ok(m) => {
            for (k, v) in &m.summary {
                println!("{k} = {v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
