use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gibbs::gibbs_sweep;
use super::state::{init_state, McmcState};
use super::{PhaseSchedule, PriorSettings, Priors, SamplerOptions};
use crate::data::MixedDataset;
use crate::diagnostics::{membership_summary, MembershipSummary};
use crate::error::{Error, Result};
use crate::identify::{postprocess, RelabelingReport, RotationReport};
use crate::samples::{Draw, PosteriorSamples};
use crate::select::{
    bic_mcmc, fit_noise_fa, parameter_count_for, ApproxLikelihood, FaParams, ModelScore, NoiseFaSchedule,
};
use crate::varsel::{selection_step, VarSelAction, VarSelConfig, VarSelRecord};

/// Everything needed to fit one (G, Q) model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub groups: usize,
    pub factors: usize,
    #[serde(default)]
    pub priors: PriorSettings,
    #[serde(default)]
    pub schedule: PhaseSchedule,
    #[serde(default)]
    pub varsel: VarSelConfig,
    #[serde(default)]
    pub sampler: SamplerOptions,
}

impl FitConfig {
    /// Default priors, schedule and thresholds.
    pub fn new(groups: usize, factors: usize) -> Self {
        FitConfig {
            groups,
            factors,
            priors: PriorSettings::default(),
            schedule: PhaseSchedule::default(),
            varsel: VarSelConfig::default(),
            sampler: SamplerOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.factors == 0 {
            return Err(Error::Config("G and Q must be at least 1".into()));
        }
        self.schedule.validate()?;
        self.varsel.validate()?;
        if let super::Execution::Parallel { chunk: 0 } = self.sampler.execution {
            return Err(Error::Config("sampler.execution chunk must be positive".into()));
        }
        Ok(())
    }

    /// Sweeps used for the noise factor analysis: a quarter of the burn-in,
    /// then half as many draws as the main chain at the same thinning.
    pub fn noise_schedule(&self) -> NoiseFaSchedule {
        NoiseFaSchedule {
            burn_in: (self.schedule.burn_in_iters / 4).max(1),
            draws: (self.schedule.n_draws() / 2).max(1),
            thin: self.schedule.thin,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BurnIn,
    VariableSelection,
    Posterior,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::BurnIn => "burn_in",
            Phase::VariableSelection => "variable_selection",
            Phase::Posterior => "posterior",
        })
    }
}

/// Reported after every sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Progress {
    pub phase: Phase,
    /// Sweeps completed across all phases.
    pub iteration: u64,
    pub retained: usize,
}

#[derive(Debug)]
pub struct FitResult {
    pub groups: usize,
    pub factors: usize,
    /// Relabeled and rotated posterior draws.
    pub samples: PosteriorSamples,
    /// Indices of the retained variables.
    pub retained: Vec<usize>,
    pub varsel_trace: Vec<VarSelRecord>,
    pub noise_fa: Option<FaParams>,
    pub relabeling: RelabelingReport,
    pub rotation: RotationReport,
    pub membership: MembershipSummary,
    pub score: ModelScore,
    /// State after the last sweep.
    pub final_state: McmcState,
}

impl FitResult {
    pub fn retained_mask(&self, n_variables: usize) -> Vec<bool> {
        let mut mask = vec![false; n_variables];
        for &j in &self.retained {
            mask[j] = true;
        }
        mask
    }
}

pub fn fit<R: Rng + ?Sized>(ds: &MixedDataset, config: &FitConfig, rng: &mut R) -> Result<FitResult> {
    fit_with_observer(ds, config, rng, &mut |_| {})
}

/// Runs burn-in, online variable selection (only when G ≥ 2), and thinned
/// posterior sampling, then post-processes and scores the draws.
pub fn fit_with_observer<R: Rng + ?Sized>(
    ds: &MixedDataset,
    config: &FitConfig,
    rng: &mut R,
    observer: &mut dyn FnMut(&Progress),
) -> Result<FitResult> {
    config.validate()?;
    let (g, q) = (config.groups, config.factors);
    let schedule = &config.schedule;
    let priors = Priors::from_settings(&config.priors, g, q)?;
    let options = &config.sampler;
    let mut state = init_state(ds, g, q, &priors, options, rng)?;
    let mut iteration = 0u64;

    let mut sweep = |state: &mut McmcState, phase: Phase, rng: &mut R, iteration: &mut u64| -> Result<()> {
        gibbs_sweep(state, ds, &priors, options, rng)?;
        *iteration += 1;
        observer(&Progress {
            phase,
            iteration: *iteration,
            retained: state.n_active(),
        });
        Ok(())
    };

    for _ in 0..schedule.burn_in_iters {
        sweep(&mut state, Phase::BurnIn, rng, &mut iteration)?;
    }

    let mut trace = Vec::new();
    if g >= 2 {
        let mut clean = 0;
        let mut check = 0u64;
        loop {
            let records = selection_step(&mut state, ds, &config.varsel, check_iteration(schedule, check));
            let removed = records.iter().filter(|r| r.action == VarSelAction::Removed).count();
            trace.extend(records);
            if state.n_active() < 2 {
                return Err(Error::DegenerateModel(format!(
                    "only {} variable(s) retained after variable selection",
                    state.n_active()
                )));
            }
            clean = if removed == 0 { clean + 1 } else { 0 };
            if clean >= schedule.varsel_stop_after_clean {
                break;
            }
            for _ in 0..schedule.varsel_check_every {
                sweep(&mut state, Phase::VariableSelection, rng, &mut iteration)?;
            }
            check += 1;
        }
    } else {
        log::debug!("G = 1: variable selection skipped");
    }

    let retained = state.active_variables();
    let mask: Vec<bool> = (0..ds.n_variables()).map(|j| state.is_active(j)).collect();
    let removed_cont: Vec<usize> = (0..ds.n_continuous()).filter(|&j| !mask[j]).collect();
    let noise_data = DMatrix::from_fn(ds.n_obs(), removed_cont.len(), |i, c| {
        ds.continuous()[(i, removed_cont[c])]
    });
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.random());
    log::debug!(
        "fitting noise factor analysis on {} removed continuous variables",
        removed_cont.len()
    );
    let noise_fa = fit_noise_fa(&noise_data, q, &config.priors, config.noise_schedule(), &mut noise_rng)?;
    let likelihood = ApproxLikelihood::new(ds, &mask, noise_fa.as_ref())?;

    let latent_dims: Vec<usize> = state
        .active_dims()
        .iter()
        .copied()
        .filter(|&d| d >= ds.n_continuous())
        .collect();
    let mut draws = Vec::with_capacity(schedule.n_draws());
    for t in 1..=schedule.posterior_iters {
        sweep(&mut state, Phase::Posterior, rng, &mut iteration)?;
        if t % schedule.thin == 0 {
            let loglik = likelihood.loglik(&state.alloc, &state.pi, &state.loadings, state.psi.as_slice())?;
            draws.push(Draw::from_state(&state, iteration, &latent_dims, loglik));
        }
    }

    let mut ever_used = vec![false; g];
    for d in &draws {
        for &a in &d.alloc {
            ever_used[a as usize] = true;
        }
    }
    if let Some(empty) = ever_used.iter().position(|&u| !u) {
        return Err(Error::DegenerateModel(format!(
            "cluster {} is empty in every posterior draw",
            empty + 1
        )));
    }

    let mut samples = PosteriorSamples {
        n_obs: ds.n_obs(),
        groups: g,
        factors: q,
        latent_dim: state.latent_dim(),
        active_dims: state.active_dims().to_vec(),
        latent_dims,
        draws,
    };
    let (relabeling, rotation) = postprocess(&mut samples)?;
    // Rotation perturbs the last bits of the likelihood, so store values that
    // match the rotated draws exactly.
    for d in &mut samples.draws {
        let alloc: Vec<usize> = d.alloc.iter().map(|&a| a as usize).collect();
        d.loglik = likelihood.loglik(&alloc, &d.pi, &d.loadings, &d.psi)?;
    }
    let membership = membership_summary(&samples)?;
    let nu = parameter_count_for(ds, &mask, g, q);
    let (max_loglik, bic) = bic_mcmc(&samples.logliks(), nu, ds.n_obs())?;
    let score = ModelScore {
        groups: g,
        factors: q,
        max_loglik,
        nu,
        bic_mcmc: bic,
        n_retained: retained.len(),
        retained: retained.iter().map(|&j| ds.variable(j).name.clone()).collect(),
    };
    Ok(FitResult {
        groups: g,
        factors: q,
        samples,
        retained,
        varsel_trace: trace,
        noise_fa,
        relabeling,
        rotation,
        membership,
        score,
        final_state: state,
    })
}

/// Sweep count at which variable-selection check `k` happens; the first
/// check follows burn-in directly.
fn check_iteration(schedule: &PhaseSchedule, k: u64) -> u64 {
    schedule.burn_in_iters as u64 + k * schedule.varsel_check_every as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::adjusted_rand_index;
    use crate::simulate::{generate, recovery_scenario};

    fn short() -> PhaseSchedule {
        PhaseSchedule {
            burn_in_iters: 300,
            varsel_check_every: 50,
            varsel_stop_after_clean: 3,
            posterior_iters: 400,
            thin: 4,
        }
    }

    #[test]
    fn single_cluster_skips_selection() {
        let sim = generate(&recovery_scenario(), 120, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let config = FitConfig {
            schedule: short(),
            ..FitConfig::new(1, 1)
        };
        let result = fit(&sim.dataset, &config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(result.varsel_trace.is_empty());
        assert_eq!(result.retained.len(), sim.dataset.n_variables());
        assert!(result.noise_fa.is_none());
        assert_eq!(result.samples.n_draws(), 100);
        assert!(result.membership.uncertainty.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn recovers_two_clusters() {
        let sim = generate(&recovery_scenario(), 300, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        // From a uniform random start the chain can sit for thousands of
        // sweeps in a mode where one factor absorbs the cluster separation.
        let config = FitConfig {
            schedule: short(),
            sampler: SamplerOptions {
                warm_start: true,
                ..Default::default()
            },
            ..FitConfig::new(2, 2)
        };
        let mut phases = Vec::new();
        let result = fit_with_observer(&sim.dataset, &config, &mut ChaCha8Rng::seed_from_u64(4), &mut |p| {
            if phases.last() != Some(&p.phase) {
                phases.push(p.phase);
            }
        })
        .unwrap();
        assert_eq!(phases, vec![Phase::BurnIn, Phase::VariableSelection, Phase::Posterior]);
        let ari = adjusted_rand_index(&result.membership.hard, &sim.alloc).unwrap();
        assert!(ari > 0.9, "ARI {ari}");
        assert!(result.membership.uncertainty.iter().all(|&u| (0.0..=0.5).contains(&u)));
        let s = &result.score;
        assert_eq!(s.bic_mcmc, 2.0 * s.max_loglik - s.nu as f64 * (300f64).ln());
        // Removal is permanent: retained counts never grow across checks.
        let mut counts = Vec::new();
        for rec in &result.varsel_trace {
            if counts.last().map(|(it, _)| *it) != Some(rec.iteration) {
                counts.push((rec.iteration, 0));
            }
            counts.last_mut().unwrap().1 += 1;
        }
        assert!(counts.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn seeded_fits_are_identical() {
        let sim = generate(&recovery_scenario(), 80, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let config = FitConfig {
            schedule: PhaseSchedule {
                burn_in_iters: 40,
                varsel_check_every: 10,
                varsel_stop_after_clean: 2,
                posterior_iters: 40,
                thin: 4,
            },
            ..FitConfig::new(2, 1)
        };
        let a = fit(&sim.dataset, &config, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = fit(&sim.dataset, &config, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.score, b.score);
    }

    #[test]
    fn invalid_config() {
        let sim = generate(&recovery_scenario(), 20, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mut config = FitConfig::new(2, 1);
        config.schedule.thin = 3;
        assert!(matches!(
            fit(&sim.dataset, &config, &mut ChaCha8Rng::seed_from_u64(8)),
            Err(Error::Config(_))
        ));
    }
}
