use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{Priors, SamplerOptions};
use crate::data::{MixedDataset, VariableKind};
use crate::distributions::{sample_mvn, sample_standard_normal, sample_truncated_normal, TruncationInterval};
use crate::error::{Error, Result};

/// One configuration of the Gibbs sampler.
///
/// Latent data and traits are stored one observation per column (`D × N` and
/// `Q × N`) so that each observation's vector is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct McmcState {
    /// Latent data; the first `A` rows are the observed continuous values.
    pub z: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub alloc: Vec<usize>,
    pub pi: Vec<f64>,
    /// Per cluster, `D × (Q+1)`: column 0 is μ_g, the rest Λ_g.
    pub loadings: Vec<DMatrix<f64>>,
    pub psi: DVector<f64>,
    /// Membership probabilities from the last allocation update, `G × N`.
    pub membership: DMatrix<f64>,
    active: Vec<bool>,
    active_dims: Vec<usize>,
}

impl McmcState {
    pub fn groups(&self) -> usize {
        self.pi.len()
    }

    pub fn factors(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.alloc.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.z.nrows()
    }

    /// Whether variable `j` is still in the model.
    pub fn is_active(&self, j: usize) -> bool {
        self.active[j]
    }

    pub fn active_variables(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&j| self.active[j]).collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Latent dimensions belonging to retained variables, ascending.
    pub fn active_dims(&self) -> &[usize] {
        &self.active_dims
    }

    /// Removes variables permanently; returns how many were newly removed.
    pub fn remove_variables(&mut self, ds: &MixedDataset, removed: &[usize]) -> usize {
        let mut count = 0;
        for &j in removed {
            if self.active[j] {
                self.active[j] = false;
                count += 1;
            }
        }
        self.active_dims = active_dims(ds, &self.active);
        count
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut counts = vec![0; self.groups()];
        for &g in &self.alloc {
            counts[g] += 1;
        }
        counts
    }

    /// λ̃_gdᵀ θ̃_i.
    #[inline]
    pub fn fitted(&self, g: usize, d: usize, i: usize) -> f64 {
        let lam = &self.loadings[g];
        let mut m = lam[(d, 0)];
        for k in 0..self.theta.nrows() {
            m += lam[(d, k + 1)] * self.theta[(k, i)];
        }
        m
    }

    /// Counts retained categorical cells whose latent values break the
    /// truncation rules for the observed response.
    pub fn latent_violations(&self, ds: &MixedDataset) -> usize {
        let layout = ds.layout();
        let mut violations = 0;
        for j in ds.n_continuous()..ds.n_variables() {
            if !self.active[j] {
                continue;
            }
            let slot = layout.slot(j);
            let codes = ds.codes(j);
            for (i, &y) in codes.iter().enumerate() {
                let col = self.z.column(i);
                let z = &col.as_slice()[slot.range()];
                if !consistent(z, y) {
                    violations += 1;
                }
            }
        }
        violations
    }

    /// True when no parameter or latent value is NaN or infinite and the
    /// simplex and positivity constraints hold.
    pub fn is_well_formed(&self, ds: &MixedDataset) -> bool {
        let finite = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
        let pi_ok =
            self.pi.iter().all(|&p| p > 0.0 && p.is_finite()) && (self.pi.iter().sum::<f64>() - 1.0).abs() < 1e-10;
        let psi_ok = self.psi.iter().all(|&p| p > 0.0 && p.is_finite())
            && self.psi.iter().skip(ds.n_continuous()).all(|&p| p == 1.0);
        finite(&self.z)
            && finite(&self.theta)
            && self.loadings.iter().all(finite)
            && pi_ok
            && psi_ok
            && self.alloc.iter().all(|&g| g < self.groups())
    }

    /// Relabels clusters: old label `g` becomes `perm[g]`.
    pub fn permute_clusters(&mut self, perm: &[usize]) {
        let g = self.groups();
        assert_eq!(perm.len(), g);
        let mut pi = vec![0.0; g];
        let mut loadings = self.loadings.clone();
        let mut membership = self.membership.clone();
        for old in 0..g {
            pi[perm[old]] = self.pi[old];
            loadings[perm[old]] = self.loadings[old].clone();
            membership.set_row(perm[old], &self.membership.row(old));
        }
        for a in &mut self.alloc {
            *a = perm[*a];
        }
        self.pi = pi;
        self.loadings = loadings;
        self.membership = membership;
    }
}

/// Does the latent vector `z` of one categorical cell reproduce response `y`?
pub fn consistent(z: &[f64], y: u32) -> bool {
    if z.len() == 1 {
        return (y == 1) == (z[0] > 0.0) && z[0] != 0.0;
    }
    let (arg, max) = z.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |(ba, bm), (k, &v)| if v > bm { (k, v) } else { (ba, bm) },
    );
    if y == 0 {
        max < 0.0
    } else {
        let k = y as usize - 1;
        max > 0.0 && arg == k && z.iter().enumerate().all(|(l, &v)| l == k || v < z[k])
    }
}

pub(crate) fn active_dims(ds: &MixedDataset, active: &[bool]) -> Vec<usize> {
    let layout = ds.layout();
    let mut dims = Vec::new();
    for (j, &on) in active.iter().enumerate() {
        if on {
            dims.extend(layout.slot(j).range());
        }
    }
    dims
}

/// Draws a latent vector for one categorical cell from N(0, I) restricted to
/// the region consistent with `y`.
pub(crate) fn draw_consistent_latent<R: Rng + ?Sized>(out: &mut [f64], y: u32, rng: &mut R) {
    if out.len() == 1 {
        let iv = if y == 1 {
            TruncationInterval::POSITIVE
        } else {
            TruncationInterval::NEGATIVE
        };
        out[0] = sample_truncated_normal(0.0, 1.0, iv, rng);
        return;
    }
    if y == 0 {
        for v in out.iter_mut() {
            *v = sample_truncated_normal(0.0, 1.0, TruncationInterval::NEGATIVE, rng);
        }
    } else {
        let k = y as usize - 1;
        out[k] = sample_truncated_normal(0.0, 1.0, TruncationInterval::POSITIVE, rng);
        let top = out[k];
        for (l, v) in out.iter_mut().enumerate() {
            if l != k {
                *v = sample_truncated_normal(0.0, 1.0, TruncationInterval::below(top), rng);
            }
        }
    }
}

/// Random initial state: uniform allocations, standard normal traits,
/// loadings from their prior, and truncated standard normal latent data.
pub fn init_state<R: Rng + ?Sized>(
    ds: &MixedDataset,
    groups: usize,
    factors: usize,
    priors: &Priors,
    options: &SamplerOptions,
    rng: &mut R,
) -> Result<McmcState> {
    let n = ds.n_obs();
    let d = ds.layout().dim();
    if groups == 0 {
        return Err(Error::Dimension("G must be at least 1".into()));
    }
    if factors == 0 || factors >= d {
        return Err(Error::Dimension(format!("Q = {factors} must satisfy 1 ≤ Q < D = {d}")));
    }
    if priors.groups() != groups || priors.factors() != factors {
        return Err(Error::Dimension(format!(
            "priors are for G = {}, Q = {} but G = {groups}, Q = {factors} was requested",
            priors.groups(),
            priors.factors()
        )));
    }

    let a = ds.n_continuous();
    let mut z = DMatrix::zeros(d, n);
    for j in 0..a {
        for (i, &x) in ds.continuous_column(j).iter().enumerate() {
            z[(j, i)] = x;
        }
    }
    let layout = ds.layout();
    for j in a..ds.n_variables() {
        let slot = layout.slot(j);
        debug_assert!(ds.variable(j).kind != VariableKind::Continuous);
        for (i, &y) in ds.codes(j).iter().enumerate() {
            let col = &mut z.column_mut(i);
            draw_consistent_latent(&mut col.as_mut_slice()[slot.range()], y, rng);
        }
    }

    let alloc: Vec<usize> = if groups == 1 {
        vec![0; n]
    } else if options.warm_start {
        kmeans(&z, groups, 25, rng)
    } else {
        (0..n).map(|_| rng.random_range(0..groups)).collect()
    };
    let theta = DMatrix::from_fn(factors, n, |_, _| sample_standard_normal(rng));
    let mut loadings = Vec::with_capacity(groups);
    for _ in 0..groups {
        let mut lam = DMatrix::zeros(d, factors + 1);
        for row in 0..d {
            let draw = sample_mvn(&priors.lambda_mean, &priors.lambda_cov, rng)?;
            lam.set_row(row, &draw.transpose());
        }
        loadings.push(lam);
    }
    let active = vec![true; ds.n_variables()];
    let active_dims = active_dims(ds, &active);
    Ok(McmcState {
        z,
        theta,
        alloc,
        pi: vec![1.0 / groups as f64; groups],
        loadings,
        psi: DVector::from_element(d, 1.0),
        membership: DMatrix::from_element(groups, n, 1.0 / groups as f64),
        active,
        active_dims,
    })
}

/// Lloyd's k-means with k-means++ seeding over the columns of `points`.
fn kmeans<R: Rng + ?Sized>(points: &DMatrix<f64>, k: usize, iters: usize, rng: &mut R) -> Vec<usize> {
    let n = points.ncols();
    let dist2 = |a: &DVector<f64>, i: usize| (points.column(i) - a).norm_squared();
    let mut centers: Vec<DVector<f64>> = vec![points.column(rng.random_range(0..n)).into_owned()];
    while centers.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| centers.iter().map(|c| dist2(c, i)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            crate::distributions::categorical_index(&weights, total, rng)
        } else {
            rng.random_range(0..n)
        };
        centers.push(points.column(next).into_owned());
    }
    let mut alloc = vec![0; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, slot) in alloc.iter_mut().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(&centers[a], i).total_cmp(&dist2(&centers[b], i)))
                .unwrap_or(0);
            if best != *slot {
                *slot = best;
                changed = true;
            }
        }
        for (g, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| alloc[i] == g).collect();
            if !members.is_empty() {
                let mut c = DVector::zeros(points.nrows());
                for &i in &members {
                    c += points.column(i);
                }
                *center = c / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    alloc
}
