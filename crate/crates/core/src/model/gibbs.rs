//! Full conditional updates. Each function leaves every block it does not
//! name untouched, so blocks can be frozen individually in tests.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::state::McmcState;
use super::{AllocationMode, Execution, Priors, SamplerOptions};
use crate::data::{LatentSlot, MixedDataset};
use crate::distributions::{
    categorical_index, normal_logpdf, sample_dirichlet, sample_inverse_gamma, sample_mvn_canonical,
    sample_truncated_normal, sample_with_precision_factor, FactorGaussian, TruncationInterval,
};
use crate::error::Result;

/// One sweep: latent data, latent traits, item parameters, uniquenesses,
/// allocations, mixing proportions.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut McmcState,
    ds: &MixedDataset,
    priors: &Priors,
    options: &SamplerOptions,
    rng: &mut R,
) -> Result<()> {
    update_latent_data(state, ds, options.execution, rng);
    update_latent_traits(state, rng);
    update_item_parameters(state, priors, rng)?;
    update_uniquenesses(state, ds, priors, rng)?;
    update_allocations(state, options.allocation, rng)?;
    update_mixing_proportions(state, priors, rng)?;
    Ok(())
}

struct CategoricalColumn<'a> {
    slot: LatentSlot,
    codes: &'a [u32],
}

/// Redraws the latent data of every retained categorical variable from its
/// truncated Gaussian full conditional. Continuous rows are never touched.
pub fn update_latent_data<R: Rng + ?Sized>(
    state: &mut McmcState,
    ds: &MixedDataset,
    execution: Execution,
    rng: &mut R,
) {
    let layout = ds.layout();
    let columns: Vec<CategoricalColumn> = (ds.n_continuous()..ds.n_variables())
        .filter(|&j| state.is_active(j))
        .map(|j| CategoricalColumn {
            slot: layout.slot(j),
            codes: ds.codes(j),
        })
        .collect();
    if columns.is_empty() {
        return;
    }
    let d = state.latent_dim();
    let McmcState {
        z,
        theta,
        alloc,
        loadings,
        ..
    } = state;
    let theta = &*theta;
    let alloc = &*alloc;
    let loadings = &*loadings;
    match execution {
        Execution::Sequential => {
            for (i, z_col) in z.as_mut_slice().chunks_mut(d).enumerate() {
                refresh_latent_column(z_col, i, theta, &loadings[alloc[i]], &columns, rng);
            }
        }
        Execution::Parallel { chunk } => {
            let chunk = chunk.max(1);
            let n = alloc.len();
            let seeds: Vec<u64> = (0..n.div_ceil(chunk)).map(|_| rng.random()).collect();
            z.as_mut_slice()
                .par_chunks_mut(d * chunk)
                .zip(seeds.par_iter())
                .enumerate()
                .for_each(|(c, (block, &seed))| {
                    let mut local = ChaCha8Rng::seed_from_u64(seed);
                    for (k, z_col) in block.chunks_mut(d).enumerate() {
                        let i = c * chunk + k;
                        refresh_latent_column(z_col, i, theta, &loadings[alloc[i]], &columns, &mut local);
                    }
                });
        }
    }
}

fn refresh_latent_column<R: Rng + ?Sized>(
    z_col: &mut [f64],
    i: usize,
    theta: &DMatrix<f64>,
    lam: &DMatrix<f64>,
    columns: &[CategoricalColumn],
    rng: &mut R,
) {
    let q = theta.nrows();
    let mean = |d: usize| {
        let mut m = lam[(d, 0)];
        for k in 0..q {
            m += lam[(d, k + 1)] * theta[(k, i)];
        }
        m
    };
    for col in columns {
        let y = col.codes[i];
        let slot = col.slot;
        if slot.width == 1 {
            let iv = if y == 1 {
                TruncationInterval::POSITIVE
            } else {
                TruncationInterval::NEGATIVE
            };
            z_col[slot.offset] = sample_truncated_normal(mean(slot.offset), 1.0, iv, rng);
        } else if y == 0 {
            for d in slot.range() {
                z_col[d] = sample_truncated_normal(mean(d), 1.0, TruncationInterval::NEGATIVE, rng);
            }
        } else {
            // The chosen component must exceed zero and the previous values of
            // the others; the others are then drawn below its new value.
            let top = slot.offset + y as usize - 1;
            let tau = slot
                .range()
                .filter(|&d| d != top)
                .map(|d| z_col[d])
                .fold(0.0_f64, f64::max);
            z_col[top] = sample_truncated_normal(mean(top), 1.0, TruncationInterval::above(tau), rng);
            let bound = TruncationInterval::below(z_col[top]);
            for d in slot.range().filter(|&d| d != top) {
                z_col[d] = sample_truncated_normal(mean(d), 1.0, bound, rng);
            }
        }
    }
}

/// Per-cluster pieces of the latent-trait full conditional over the retained
/// dimensions: precision I + ΛᵀΨ⁻¹Λ (factorized) and the linear term.
struct TraitKernel {
    chol: Cholesky<f64, Dyn>,
}

fn trait_kernels(state: &McmcState) -> Vec<TraitKernel> {
    let q = state.factors();
    state
        .loadings
        .iter()
        .map(|lam| {
            let mut precision = DMatrix::identity(q, q);
            for &d in state.active_dims() {
                let w = 1.0 / state.psi[d];
                for a in 0..q {
                    let la = lam[(d, a + 1)] * w;
                    for b in 0..q {
                        precision[(a, b)] += la * lam[(d, b + 1)];
                    }
                }
            }
            TraitKernel {
                chol: Cholesky::new(precision).expect("I + ΛᵀΨ⁻¹Λ is positive definite"),
            }
        })
        .collect()
}

fn trait_linear(state: &McmcState, g: usize, i: usize) -> DVector<f64> {
    let q = state.factors();
    let lam = &state.loadings[g];
    let mut b = DVector::zeros(q);
    for &d in state.active_dims() {
        let r = (state.z[(d, i)] - lam[(d, 0)]) / state.psi[d];
        for k in 0..q {
            b[k] += lam[(d, k + 1)] * r;
        }
    }
    b
}

/// θ_i ~ MVN(P⁻¹ Λ_gᵀΨ⁻¹(z_i − μ_g), P⁻¹) with P = I + Λ_gᵀΨ⁻¹Λ_g.
pub fn update_latent_traits<R: Rng + ?Sized>(state: &mut McmcState, rng: &mut R) {
    let kernels = trait_kernels(state);
    for i in 0..state.n_obs() {
        let g = state.alloc[i];
        let b = trait_linear(state, g, i);
        let draw = sample_with_precision_factor(&kernels[g].chol, &b, rng);
        state.theta.set_column(i, &draw);
    }
}

/// λ̃_gd ~ MVN with precision Σ_λ⁻¹ + Θ̃_gᵀΘ̃_g/ψ_d and linear term
/// Σ_λ⁻¹μ_λ + Θ̃_gᵀ z_gd/ψ_d, for every cluster and retained latent row.
/// Empty clusters draw from the prior.
pub fn update_item_parameters<R: Rng + ?Sized>(state: &mut McmcState, priors: &Priors, rng: &mut R) -> Result<()> {
    let q1 = state.factors() + 1;
    let dims = state.active_dims().to_vec();
    for g in 0..state.groups() {
        let mut gram = DMatrix::<f64>::zeros(q1, q1);
        let mut cross = DMatrix::<f64>::zeros(q1, dims.len());
        let mut aug = DVector::<f64>::zeros(q1);
        for i in (0..state.n_obs()).filter(|&i| state.alloc[i] == g) {
            aug[0] = 1.0;
            for k in 1..q1 {
                aug[k] = state.theta[(k - 1, i)];
            }
            gram.ger(1.0, &aug, &aug, 1.0);
            for (c, &d) in dims.iter().enumerate() {
                let zv = state.z[(d, i)];
                for k in 0..q1 {
                    cross[(k, c)] += aug[k] * zv;
                }
            }
        }
        for (c, &d) in dims.iter().enumerate() {
            let w = 1.0 / state.psi[d];
            let precision = priors.lambda_precision() + &gram * w;
            let linear = priors.lambda_precision_mean() + cross.column(c) * w;
            let draw = sample_mvn_canonical(precision, &linear, rng)?;
            state.loadings[g].set_row(d, &draw.transpose());
        }
    }
    Ok(())
}

/// ψ_d ~ IG(β₁ + N/2, β₂ + ½ Σ_i (z_id − λ̃ᵀθ̃_i)²) for retained continuous
/// dimensions; categorical dimensions stay fixed at one.
pub fn update_uniquenesses<R: Rng + ?Sized>(
    state: &mut McmcState,
    ds: &MixedDataset,
    priors: &Priors,
    rng: &mut R,
) -> Result<()> {
    let n = state.n_obs();
    for d in 0..ds.n_continuous() {
        if !state.is_active(d) {
            continue;
        }
        let ss: f64 = (0..n)
            .map(|i| (state.z[(d, i)] - state.fitted(state.alloc[i], d, i)).powi(2))
            .sum();
        state.psi[d] = sample_inverse_gamma(priors.psi_shape + 0.5 * n as f64, priors.psi_scale + 0.5 * ss, rng)?;
    }
    Ok(())
}

/// ℓ_i ~ Multinomial(1, p_i), normalized in log space.
pub fn update_allocations<R: Rng + ?Sized>(state: &mut McmcState, mode: AllocationMode, rng: &mut R) -> Result<()> {
    let groups = state.groups();
    let n = state.n_obs();
    let log_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
    let mut logw = vec![0.0; groups];
    match mode {
        AllocationMode::Marginal => {
            let dims = state.active_dims().to_vec();
            let psi = DVector::from_iterator(dims.len(), dims.iter().map(|&d| state.psi[d]));
            let q = state.factors();
            let densities = state
                .loadings
                .iter()
                .map(|lam| {
                    let mean = DVector::from_iterator(dims.len(), dims.iter().map(|&d| lam[(d, 0)]));
                    let load = DMatrix::from_fn(dims.len(), q, |r, c| lam[(dims[r], c + 1)]);
                    FactorGaussian::new(mean, load, &psi)
                })
                .collect::<Result<Vec<_>>>()?;
            let kernels = trait_kernels(state);
            let mut zi = vec![0.0; dims.len()];
            for i in 0..n {
                for (slot, &d) in zi.iter_mut().zip(&dims) {
                    *slot = state.z[(d, i)];
                }
                for g in 0..groups {
                    logw[g] = log_pi[g] + densities[g].logpdf(&zi);
                }
                let g = draw_from_log_weights(state, i, &logw, rng);
                let b = trait_linear(state, g, i);
                let draw = sample_with_precision_factor(&kernels[g].chol, &b, rng);
                state.theta.set_column(i, &draw);
            }
        }
        AllocationMode::Conditional => {
            let dims = state.active_dims().to_vec();
            for i in 0..n {
                for g in 0..groups {
                    logw[g] = log_pi[g]
                        + dims
                            .iter()
                            .map(|&d| normal_logpdf(state.z[(d, i)], state.fitted(g, d, i), state.psi[d]))
                            .sum::<f64>();
                }
                draw_from_log_weights(state, i, &logw, rng);
            }
        }
    }
    Ok(())
}

fn draw_from_log_weights<R: Rng + ?Sized>(state: &mut McmcState, i: usize, logw: &[f64], rng: &mut R) -> usize {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for (g, &wg) in w.iter().enumerate() {
        state.membership[(g, i)] = wg / total;
    }
    let g = categorical_index(&w, total, rng);
    state.alloc[i] = g;
    g
}

/// π ~ Dirichlet(α + n).
pub fn update_mixing_proportions<R: Rng + ?Sized>(state: &mut McmcState, priors: &Priors, rng: &mut R) -> Result<()> {
    let sizes = state.cluster_sizes();
    let alpha: Vec<f64> = priors
        .dirichlet_alpha
        .iter()
        .zip(&sizes)
        .map(|(&a, &n)| a + n as f64)
        .collect();
    state.pi = sample_dirichlet(&alpha, rng)?;
    Ok(())
}

/// Allocation probabilities of observation `i` without drawing; used by tests
/// and by the permutation checks.
pub fn allocation_probabilities(state: &McmcState, i: usize) -> Result<Vec<f64>> {
    let dims = state.active_dims();
    let psi = DVector::from_iterator(dims.len(), dims.iter().map(|&d| state.psi[d]));
    let zi: Vec<f64> = dims.iter().map(|&d| state.z[(d, i)]).collect();
    let q = state.factors();
    let mut logw = Vec::with_capacity(state.groups());
    for (g, lam) in state.loadings.iter().enumerate() {
        let mean = DVector::from_iterator(dims.len(), dims.iter().map(|&d| lam[(d, 0)]));
        let load = DMatrix::from_fn(dims.len(), q, |r, c| lam[(dims[r], c + 1)]);
        let fg = FactorGaussian::new(mean, load, &psi)?;
        logw.push(state.pi[g].ln() + fg.logpdf(&zi));
    }
    Ok(crate::distributions::normalize_log_weights(&logw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnData, VariableSpec};
    use crate::model::{init_state, SamplerOptions};

    fn small_dataset() -> MixedDataset {
        let n = 12;
        MixedDataset::new(
            vec![
                VariableSpec::continuous("x1"),
                VariableSpec::continuous("x2"),
                VariableSpec::binary("b", ["0", "1"]),
                VariableSpec::nominal("n", &["0", "1", "2"]),
            ],
            vec![
                ColumnData::Continuous((0..n).map(|i| (i as f64).sin()).collect()),
                ColumnData::Continuous((0..n).map(|i| (i as f64 * 0.7).cos()).collect()),
                ColumnData::Codes((0..n).map(|i| (i % 2) as u32).collect()),
                ColumnData::Codes((0..n).map(|i| (i % 3) as u32).collect()),
            ],
            None,
        )
        .unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_cluster_allocates_everything_to_it() {
        let ds = small_dataset();
        let priors = Priors::default_for(1, 1);
        let mut state = init_state(&ds, 1, 1, &priors, &SamplerOptions::default(), &mut rng(1)).unwrap();
        assert!(state.alloc.iter().all(|&g| g == 0));
        update_allocations(&mut state, AllocationMode::Marginal, &mut rng(2)).unwrap();
        assert!(state.alloc.iter().all(|&g| g == 0));
        assert_eq!(allocation_probabilities(&state, 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn sweep_preserves_invariants() {
        let ds = small_dataset();
        let priors = Priors::default_for(2, 2);
        let opts = SamplerOptions::default();
        let mut r = rng(3);
        let mut state = init_state(&ds, 2, 2, &priors, &opts, &mut r).unwrap();
        assert_eq!(state.latent_violations(&ds), 0);
        for _ in 0..200 {
            gibbs_sweep(&mut state, &ds, &priors, &opts, &mut r).unwrap();
            assert_eq!(state.latent_violations(&ds), 0);
            assert!(state.is_well_formed(&ds));
        }
    }

    #[test]
    fn parallel_execution_preserves_invariants() {
        let ds = small_dataset();
        let priors = Priors::default_for(2, 1);
        let opts = SamplerOptions {
            execution: Execution::Parallel { chunk: 5 },
            ..Default::default()
        };
        let mut r = rng(4);
        let mut state = init_state(&ds, 2, 1, &priors, &opts, &mut r).unwrap();
        for _ in 0..100 {
            gibbs_sweep(&mut state, &ds, &priors, &opts, &mut r).unwrap();
            assert_eq!(state.latent_violations(&ds), 0);
        }
        let run = || {
            let mut r = rng(9);
            let mut s = init_state(&ds, 2, 1, &priors, &opts, &mut r).unwrap();
            for _ in 0..10 {
                gibbs_sweep(&mut s, &ds, &priors, &opts, &mut r).unwrap();
            }
            s
        };
        let (first, again) = (run(), run());
        assert_eq!(first, again);
    }

    #[test]
    fn continuous_rows_never_change() {
        let ds = small_dataset();
        let priors = Priors::default_for(2, 1);
        let opts = SamplerOptions::default();
        let mut r = rng(5);
        let mut state = init_state(&ds, 2, 1, &priors, &opts, &mut r).unwrap();
        for _ in 0..20 {
            gibbs_sweep(&mut state, &ds, &priors, &opts, &mut r).unwrap();
        }
        for i in 0..ds.n_obs() {
            assert_eq!(state.z[(0, i)], ds.continuous_column(0)[i]);
            assert_eq!(state.z[(1, i)], ds.continuous_column(1)[i]);
        }
    }

    #[test]
    fn nominal_update_orders_components() {
        let ds = small_dataset();
        let priors = Priors::default_for(1, 1);
        let mut r = rng(6);
        let mut state = init_state(&ds, 1, 1, &priors, &SamplerOptions::default(), &mut r).unwrap();
        for _ in 0..50 {
            update_latent_data(&mut state, &ds, Execution::Sequential, &mut r);
            for i in 0..ds.n_obs() {
                let (z1, z2) = (state.z[(3, i)], state.z[(4, i)]);
                match ds.codes(3)[i] {
                    0 => assert!(z1 < 0.0 && z2 < 0.0),
                    1 => assert!(z1 > 0.0f64.max(z2)),
                    _ => assert!(z2 > 0.0f64.max(z1) && z1 < z2),
                }
                let b = state.z[(2, i)];
                assert_eq!(b > 0.0, ds.codes(2)[i] == 1);
            }
        }
    }

    #[test]
    fn zero_loadings_give_standard_normal_traits() {
        let ds = small_dataset();
        let priors = Priors::default_for(1, 2);
        let mut r = rng(7);
        let mut state = init_state(&ds, 1, 2, &priors, &SamplerOptions::default(), &mut r).unwrap();
        state.loadings[0].columns_mut(1, 2).fill(0.0);
        let kernels = trait_kernels(&state);
        let p = kernels[0].chol.l() * kernels[0].chol.l().transpose();
        assert!((p - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        assert!(trait_linear(&state, 0, 3).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn mirror_symmetric_clusters_split_evenly() {
        let ds = small_dataset();
        let priors = Priors::default_for(2, 1);
        let mut state = init_state(&ds, 2, 1, &priors, &SamplerOptions::default(), &mut rng(8)).unwrap();
        let i = 0;
        let dims = state.active_dims().to_vec();
        for g in 0..2 {
            let sign = if g == 0 { 1.0 } else { -1.0 };
            for &d in &dims {
                let zi = state.z[(d, i)];
                state.loadings[g][(d, 0)] = zi + sign * 0.4;
                state.loadings[g][(d, 1)] = 0.3;
            }
        }
        state.pi = vec![0.5, 0.5];
        let p = allocation_probabilities(&state, i).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-10 && (p[1] - 0.5).abs() < 1e-10);
    }
}
