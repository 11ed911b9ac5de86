//! The mixture of factor analyzers for mixed data: priors, sampler state, the
//! Gibbs sweep, and the three-phase fitting schedule.

mod fit;
mod gibbs;
mod state;

pub use fit::{fit, fit_with_observer, FitConfig, FitResult, Phase, Progress};
pub use gibbs::{
    allocation_probabilities, gibbs_sweep, update_allocations, update_item_parameters, update_latent_data,
    update_latent_traits, update_mixing_proportions, update_uniquenesses,
};
pub use state::{consistent, init_state, McmcState};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar hyperparameters; expanded into [`Priors`] once G and Q are known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    /// Symmetric Dirichlet concentration for the mixing proportions.
    pub alpha: f64,
    /// Prior mean of every entry of an augmented loadings row.
    pub lambda_mean: f64,
    /// Prior variance of every entry of an augmented loadings row.
    pub lambda_variance: f64,
    pub psi_shape: f64,
    pub psi_scale: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            alpha: 0.5,
            lambda_mean: 0.0,
            lambda_variance: 5.0,
            psi_shape: 7.0,
            psi_scale: 7.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Priors {
    pub dirichlet_alpha: Vec<f64>,
    pub lambda_mean: DVector<f64>,
    pub lambda_cov: DMatrix<f64>,
    pub psi_shape: f64,
    pub psi_scale: f64,
    lambda_precision: DMatrix<f64>,
    lambda_precision_mean: DVector<f64>,
}

impl Priors {
    pub fn new(
        dirichlet_alpha: Vec<f64>,
        lambda_mean: DVector<f64>,
        lambda_cov: DMatrix<f64>,
        psi_shape: f64,
        psi_scale: f64,
    ) -> Result<Self> {
        if dirichlet_alpha.is_empty() || dirichlet_alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::NonPositiveParameter("Dirichlet alpha".into()));
        }
        if !(psi_shape > 0.0) || !(psi_scale > 0.0) {
            return Err(Error::NonPositiveParameter("inverse gamma hyperparameters".into()));
        }
        let k = lambda_mean.len();
        if k < 2 || lambda_cov.nrows() != k || lambda_cov.ncols() != k {
            return Err(Error::Dimension("loadings prior must be (Q+1)-dimensional".into()));
        }
        let lambda_precision = lambda_cov.clone().cholesky().ok_or(Error::NonSpdCovariance)?.inverse();
        let lambda_precision_mean = &lambda_precision * &lambda_mean;
        Ok(Priors {
            dirichlet_alpha,
            lambda_mean,
            lambda_cov,
            psi_shape,
            psi_scale,
            lambda_precision,
            lambda_precision_mean,
        })
    }

    pub fn from_settings(settings: &PriorSettings, groups: usize, factors: usize) -> Result<Self> {
        if !(settings.lambda_variance > 0.0) {
            return Err(Error::NonPositiveParameter("lambda_variance".into()));
        }
        Priors::new(
            vec![settings.alpha; groups],
            DVector::from_element(factors + 1, settings.lambda_mean),
            DMatrix::identity(factors + 1, factors + 1) * settings.lambda_variance,
            settings.psi_shape,
            settings.psi_scale,
        )
    }

    /// Dirichlet(0.5, …), zero-mean loadings with covariance 5·I, IG(7, 7).
    pub fn default_for(groups: usize, factors: usize) -> Self {
        Self::from_settings(&PriorSettings::default(), groups, factors).expect("defaults are valid")
    }

    pub fn groups(&self) -> usize {
        self.dirichlet_alpha.len()
    }

    pub fn factors(&self) -> usize {
        self.lambda_mean.len() - 1
    }

    pub(crate) fn lambda_precision(&self) -> &DMatrix<f64> {
        &self.lambda_precision
    }

    pub(crate) fn lambda_precision_mean(&self) -> &DVector<f64> {
        &self.lambda_precision_mean
    }
}

/// Lengths of the burn-in, variable-selection and posterior phases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSchedule {
    pub burn_in_iters: usize,
    pub varsel_check_every: usize,
    pub varsel_stop_after_clean: usize,
    pub posterior_iters: usize,
    pub thin: usize,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        PhaseSchedule {
            burn_in_iters: 20_000,
            varsel_check_every: 1000,
            varsel_stop_after_clean: 4,
            posterior_iters: 100_000,
            thin: 100,
        }
    }
}

impl PhaseSchedule {
    /// A short schedule for small problems and tests.
    pub fn short() -> Self {
        PhaseSchedule {
            burn_in_iters: 2000,
            varsel_check_every: 250,
            varsel_stop_after_clean: 4,
            posterior_iters: 4000,
            thin: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("burn_in_iters", self.burn_in_iters),
            ("varsel_check_every", self.varsel_check_every),
            ("varsel_stop_after_clean", self.varsel_stop_after_clean),
            ("posterior_iters", self.posterior_iters),
            ("thin", self.thin),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("schedule.{name} must be positive")));
        }
        if !self.posterior_iters.is_multiple_of(self.thin) {
            return Err(Error::Config("schedule.thin must divide posterior_iters".into()));
        }
        Ok(())
    }

    pub fn n_draws(&self) -> usize {
        self.posterior_iters / self.thin
    }
}

/// How the allocation step treats the latent traits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// Allocation probabilities use MVN(μ_g, Λ_gΛ_gᵀ + Ψ) with the traits
    /// integrated out; the trait of the observation is then redrawn under its
    /// new cluster so the pair is updated as one block.
    #[default]
    Marginal,
    /// Allocation probabilities condition on the current traits.
    Conditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum Execution {
    /// Bit-reproducible single-threaded sweep.
    #[default]
    Sequential,
    /// Per-observation updates split across worker threads in fixed-size
    /// chunks, each with its own RNG stream.
    Parallel { chunk: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerOptions {
    pub allocation: AllocationMode,
    pub execution: Execution,
    /// Start allocations from k-means on the initial latent data.
    pub warm_start: bool,
}
