//! Approximate observed-data likelihood and BIC-MCMC selection of G and Q.
//!
//! The discriminating variables are scored under the mixture: a per-cluster
//! factor-analytic Gaussian on the retained continuous variables times
//! per-cluster empirical category probabilities. Removed variables are
//! independent of the clustering: a single factor analysis on the removed
//! continuous variables times pooled category probabilities.

use std::io::Write;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{ColumnData, MixedDataset, VariableSpec};
use crate::distributions::{log_sum_exp, FactorGaussian};
use crate::error::{Error, Result};
use crate::identify::procrustes_rotation;
use crate::model::{
    fit_with_observer, gibbs_sweep, init_state, FitConfig, FitResult, PriorSettings, Priors, Progress, SamplerOptions,
};

/// Parameters of a one-cluster factor analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct FaParams {
    pub mean: DVector<f64>,
    /// `Ȧ × Q`; may have zero columns.
    pub loadings: DMatrix<f64>,
    pub psi: DVector<f64>,
}

impl FaParams {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut cov = &self.loadings * self.loadings.transpose();
        for d in 0..self.dim() {
            cov[(d, d)] += self.psi[d];
        }
        cov
    }

    pub fn density(&self) -> Result<FactorGaussian> {
        FactorGaussian::new(self.mean.clone(), self.loadings.clone(), &self.psi)
    }
}

/// Sweep counts for the noise factor analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseFaSchedule {
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
}

/// Fits a one-cluster Bayesian factor analysis to the columns of `data`
/// (`N × Ȧ`) with the mixture sampler and returns posterior means. Loadings
/// draws are rotated towards the first kept draw before averaging. `None`
/// when there are no columns.
///
/// The number of factors is capped at `Ȧ − 1`; with a single column the fit
/// reduces to its sample mean and variance.
pub fn fit_noise_fa<R: Rng + ?Sized>(
    data: &DMatrix<f64>,
    factors: usize,
    settings: &PriorSettings,
    schedule: NoiseFaSchedule,
    rng: &mut R,
) -> Result<Option<FaParams>> {
    let (n, a) = data.shape();
    if a == 0 {
        return Ok(None);
    }
    let q = factors.min(a - 1);
    if q == 0 {
        let mean = DVector::from_fn(a, |d, _| data.column(d).mean());
        let psi = DVector::from_fn(a, |d, _| {
            data.column(d).iter().map(|x| (x - mean[d]).powi(2)).sum::<f64>() / n as f64
        });
        if psi.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::ZeroVariance("removed continuous variable".into()));
        }
        return Ok(Some(FaParams {
            mean,
            loadings: DMatrix::zeros(a, 0),
            psi,
        }));
    }

    let variables: Vec<VariableSpec> = (0..a).map(|d| VariableSpec::continuous(format!("x{d}"))).collect();
    let columns = (0..a)
        .map(|d| ColumnData::Continuous(data.column(d).iter().copied().collect()))
        .collect();
    let ds = MixedDataset::new(variables, columns, None)?;
    let priors = Priors::from_settings(settings, 1, q)?;
    let options = SamplerOptions::default();
    let mut state = init_state(&ds, 1, q, &priors, &options, rng)?;
    for _ in 0..schedule.burn_in {
        gibbs_sweep(&mut state, &ds, &priors, &options, rng)?;
    }
    let mut mean = DVector::zeros(a);
    let mut loadings = DMatrix::zeros(a, q);
    let mut psi = DVector::zeros(a);
    let mut template: Option<DMatrix<f64>> = None;
    for _ in 0..schedule.draws {
        for _ in 0..schedule.thin {
            gibbs_sweep(&mut state, &ds, &priors, &options, rng)?;
        }
        let lam = state.loadings[0].columns(1, q).into_owned();
        let aligned = match &template {
            Some(t) => &lam * procrustes_rotation(&lam, t).0,
            None => {
                template = Some(lam.clone());
                lam
            }
        };
        mean += state.loadings[0].column(0);
        loadings += aligned;
        psi += &state.psi;
    }
    let k = schedule.draws.max(1) as f64;
    Ok(Some(FaParams {
        mean: mean / k,
        loadings: loadings / k,
        psi: psi / k,
    }))
}

/// Relative frequencies of each level within each group (`groups × levels`).
/// A row with an empty cell gets ½ added to every cell first.
pub fn empirical_category_probs(codes: &[u32], alloc: &[usize], groups: usize, levels: usize) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; levels]; groups];
    for (&y, &g) in codes.iter().zip(alloc) {
        counts[g][y as usize] += 1.0;
    }
    for row in &mut counts {
        if row.contains(&0.0) {
            row.iter_mut().for_each(|c| *c += 0.5);
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

/// Pooled relative frequencies over all observations.
pub fn pooled_category_probs(codes: &[u32], levels: usize) -> Vec<f64> {
    empirical_category_probs(codes, &vec![0; codes.len()], 1, levels).remove(0)
}

/// Evaluates the approximate log-likelihood of one retained-variable set.
#[derive(Clone, Debug)]
pub struct ApproxLikelihood<'a> {
    ds: &'a MixedDataset,
    disc_continuous: Vec<usize>,
    disc_categorical: Vec<usize>,
    noise_total: f64,
}

impl<'a> ApproxLikelihood<'a> {
    /// `retained[j]` says whether variable `j` is discriminating; `noise_fa`
    /// must cover exactly the removed continuous variables in order.
    pub fn new(ds: &'a MixedDataset, retained: &[bool], noise_fa: Option<&FaParams>) -> Result<Self> {
        let a = ds.n_continuous();
        let disc_continuous: Vec<usize> = (0..a).filter(|&j| retained[j]).collect();
        let removed_continuous: Vec<usize> = (0..a).filter(|&j| !retained[j]).collect();
        let disc_categorical: Vec<usize> = (a..ds.n_variables()).filter(|&j| retained[j]).collect();
        let removed_categorical: Vec<usize> = (a..ds.n_variables()).filter(|&j| !retained[j]).collect();

        let n = ds.n_obs();
        let mut noise = vec![0.0; n];
        match noise_fa {
            Some(fa) if fa.dim() == removed_continuous.len() && fa.dim() > 0 => {
                let dens = fa.density()?;
                let mut x = vec![0.0; fa.dim()];
                for (i, slot) in noise.iter_mut().enumerate() {
                    for (r, &j) in removed_continuous.iter().enumerate() {
                        x[r] = ds.continuous()[(i, j)];
                    }
                    *slot += dens.logpdf(&x);
                }
            }
            None if removed_continuous.is_empty() => {}
            _ => {
                return Err(Error::Dimension(format!(
                    "noise factor analysis must cover the {} removed continuous variables",
                    removed_continuous.len()
                )))
            }
        }
        for &j in &removed_categorical {
            let probs = pooled_category_probs(ds.codes(j), ds.variable(j).n_levels());
            for (slot, &y) in noise.iter_mut().zip(ds.codes(j)) {
                *slot += probs[y as usize].ln();
            }
        }
        Ok(ApproxLikelihood {
            ds,
            disc_continuous,
            disc_categorical,
            noise_total: noise.iter().sum(),
        })
    }

    /// Contribution of the removed variables, fixed for the whole chain.
    pub fn noise_loglik(&self) -> f64 {
        self.noise_total
    }

    /// Log-likelihood under one draw's allocation and parameters. Cluster
    /// terms are sorted before summation so that relabeling a draw leaves the
    /// value bit-identical.
    pub fn loglik(&self, alloc: &[usize], pi: &[f64], loadings: &[DMatrix<f64>], psi: &[f64]) -> Result<f64> {
        let groups = pi.len();
        let ds = self.ds;
        let n = ds.n_obs();
        let dims = &self.disc_continuous;
        let q = loadings[0].ncols() - 1;

        let densities = if dims.is_empty() {
            None
        } else {
            let psi_sub = DVector::from_iterator(dims.len(), dims.iter().map(|&d| psi[d]));
            let dens = loadings
                .iter()
                .map(|lam| {
                    let mean = DVector::from_iterator(dims.len(), dims.iter().map(|&d| lam[(d, 0)]));
                    let l = DMatrix::from_fn(dims.len(), q, |r, c| lam[(dims[r], c + 1)]);
                    FactorGaussian::new(mean, l, &psi_sub)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(dens)
        };
        let tables: Vec<Vec<Vec<f64>>> = self
            .disc_categorical
            .iter()
            .map(|&j| {
                let probs = empirical_category_probs(ds.codes(j), alloc, groups, ds.variable(j).n_levels());
                probs
                    .into_iter()
                    .map(|row| row.into_iter().map(f64::ln).collect())
                    .collect()
            })
            .collect();
        let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();

        let mut x = vec![0.0; dims.len()];
        let mut terms = vec![0.0; groups];
        let mut total = 0.0;
        for i in 0..n {
            for (r, &d) in dims.iter().enumerate() {
                x[r] = ds.continuous()[(i, d)];
            }
            for (g, t) in terms.iter_mut().enumerate() {
                *t = log_pi[g];
                if let Some(dens) = &densities {
                    *t += dens[g].logpdf(&x);
                }
                for (table, &j) in tables.iter().zip(&self.disc_categorical) {
                    *t += table[g][ds.codes(j)[i] as usize];
                }
            }
            terms.sort_by(f64::total_cmp);
            total += log_sum_exp(&terms);
        }
        Ok(total + self.noise_total)
    }
}

/// Number of free parameters of the approximate likelihood.
///
/// Mixing weights, per-cluster means and loadings plus shared uniquenesses on
/// the discriminating continuous variables (loadings columns capped at the
/// number of such variables), per-cluster category tables, the noise factor
/// analysis, and pooled tables for removed categoricals. Uniquenesses fixed at
/// one are not counted.
pub fn parameter_count(
    groups: usize,
    factors: usize,
    disc_continuous: usize,
    disc_levels: &[usize],
    removed_continuous: usize,
    removed_levels: &[usize],
) -> usize {
    let q_eff = factors.min(disc_continuous);
    let free = |levels: &[usize]| levels.iter().map(|k| k - 1).sum::<usize>();
    (groups - 1)
        + groups * (disc_continuous + disc_continuous * q_eff)
        + disc_continuous
        + groups * free(disc_levels)
        + if removed_continuous > 0 {
            removed_continuous * (2 + factors)
        } else {
            0
        }
        + free(removed_levels)
}

/// ν for a dataset and retained-variable mask.
pub fn parameter_count_for(ds: &MixedDataset, retained: &[bool], groups: usize, factors: usize) -> usize {
    let a = ds.n_continuous();
    let levels = |keep: bool| -> Vec<usize> {
        (a..ds.n_variables())
            .filter(|&j| retained[j] == keep)
            .map(|j| ds.variable(j).n_levels())
            .collect()
    };
    let disc_cont = (0..a).filter(|&j| retained[j]).count();
    parameter_count(groups, factors, disc_cont, &levels(true), a - disc_cont, &levels(false))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelScore {
    #[serde(rename = "G")]
    pub groups: usize,
    #[serde(rename = "Q")]
    pub factors: usize,
    pub max_loglik: f64,
    pub nu: usize,
    pub bic_mcmc: f64,
    pub n_retained: usize,
    #[serde(skip)]
    pub retained: Vec<String>,
}

/// `2·max(logliks) − ν·ln N`.
pub fn bic_mcmc(logliks: &[f64], nu: usize, n_obs: usize) -> Result<(f64, f64)> {
    let max = logliks
        .iter()
        .copied()
        .filter(|x| !x.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateModel("no finite log-likelihood in the chain".into()));
    }
    Ok((max, 2.0 * max - nu as f64 * (n_obs as f64).ln()))
}

/// Seed of grid cell `(G, Q)` derived from the root seed.
pub fn cell_seed(root: u64, groups: usize, factors: usize) -> u64 {
    let mut x = root ^ ((groups as u64) << 32 | factors as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FailedCell {
    pub groups: usize,
    pub factors: usize,
    pub reason: String,
}

#[derive(Debug)]
pub struct GridResult {
    /// Successful cells in `(G, Q)` order.
    pub scores: Vec<ModelScore>,
    pub failures: Vec<FailedCell>,
    /// Fit of the winning cell.
    pub best: Option<FitResult>,
}

impl GridResult {
    pub fn best_score(&self) -> Option<&ModelScore> {
        self.best.as_ref().map(|f| &f.score)
    }
}

/// Larger BIC wins; ties go to the smaller model.
fn beats(a: &ModelScore, b: &ModelScore) -> bool {
    match a.bic_mcmc.total_cmp(&b.bic_mcmc) {
        std::cmp::Ordering::Equal => (a.groups, a.factors) < (b.groups, b.factors),
        ord => ord.is_gt(),
    }
}

/// Fits every `(G, Q)` cell on at most `workers` threads. Each cell runs on
/// its own RNG seeded by [`cell_seed`], so results do not depend on
/// scheduling. A cell that fails is recorded and skipped.
pub fn grid_search(
    ds: &MixedDataset,
    group_range: &[usize],
    factor_range: &[usize],
    base: &FitConfig,
    root_seed: u64,
    workers: usize,
) -> Result<GridResult> {
    grid_search_with_observer(ds, group_range, factor_range, base, root_seed, workers, &|_, _, _| {})
}

/// [`grid_search`] reporting every sweep of every cell as `(G, Q, progress)`.
pub fn grid_search_with_observer(
    ds: &MixedDataset,
    group_range: &[usize],
    factor_range: &[usize],
    base: &FitConfig,
    root_seed: u64,
    workers: usize,
    observer: &(dyn Fn(usize, usize, &Progress) + Sync),
) -> Result<GridResult> {
    if group_range.is_empty() || factor_range.is_empty() {
        return Err(Error::Config("grid ranges must be nonempty".into()));
    }
    let cells: Vec<(usize, usize)> = group_range
        .iter()
        .flat_map(|&g| factor_range.iter().map(move |&q| (g, q)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let best: Mutex<Option<FitResult>> = Mutex::new(None);
    let outcomes: Vec<std::result::Result<ModelScore, FailedCell>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(g, q)| {
                let config = FitConfig {
                    groups: g,
                    factors: q,
                    ..base.clone()
                };
                let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(root_seed, g, q));
                match fit_with_observer(ds, &config, &mut rng, &mut |p| observer(g, q, p)) {
                    Ok(result) => {
                        let score = result.score.clone();
                        let mut slot = best.lock().expect("grid lock poisoned");
                        if slot.as_ref().is_none_or(|b| beats(&score, &b.score)) {
                            *slot = Some(result);
                        }
                        Ok(score)
                    }
                    Err(e) => {
                        log::warn!("grid cell G = {g}, Q = {q} failed: {e}");
                        Err(FailedCell {
                            groups: g,
                            factors: q,
                            reason: e.to_string(),
                        })
                    }
                }
            })
            .collect()
    });
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(s) => scores.push(s),
            Err(f) => failures.push(f),
        }
    }
    Ok(GridResult {
        scores,
        failures,
        best: best.into_inner().expect("grid lock poisoned"),
    })
}

/// Score table with columns `G, Q, max_loglik, nu, bic_mcmc, n_retained`.
pub fn write_scores<W: Write>(scores: &[ModelScore], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for s in scores {
        out.serialize(s)?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
