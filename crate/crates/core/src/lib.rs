//! Bayesian clustering of mixed continuous, binary and nominal data with a
//! mixture of factor analyzers.
//!
//! Observations are mapped to a latent Gaussian vector (continuous variables
//! directly, categorical variables through truncation rules) that follows a
//! finite mixture of factor-analytic Gaussians. The [`model`] module samples
//! the posterior by data-augmented Gibbs sampling with online variable
//! selection ([`varsel`]); [`select`] scores fits with BIC-MCMC over a grid of
//! cluster counts and latent dimensions; [`identify`] and [`diagnostics`]
//! post-process and summarize the draws.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read better than zips when several arrays share an index.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod identify;
pub mod model;
pub mod samples;
pub mod select;
pub mod simulate;
pub mod store;
pub mod varsel;

pub use data::{load_csv, read_csv, LoadOptions, MixedDataset, Schema, VariableKind, VariableSpec};
pub use error::{Error, Result};
pub use model::{fit, FitConfig, FitResult, PhaseSchedule, PriorSettings, Priors, SamplerOptions};
pub use samples::{Draw, PosteriorSamples};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
