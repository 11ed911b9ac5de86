use nalgebra::DMatrix;

use crate::model::McmcState;

/// One thinned posterior draw.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub iteration: u64,
    pub alloc: Vec<u32>,
    pub pi: Vec<f64>,
    /// Per cluster `D × (Q+1)`; column 0 holds μ_g.
    pub loadings: Vec<DMatrix<f64>>,
    pub psi: Vec<f64>,
    /// `Q × N`.
    pub theta: DMatrix<f64>,
    /// Latent data on the retained categorical dimensions, `L × N`, rows in
    /// the order of [`PosteriorSamples::latent_dims`].
    pub latent: DMatrix<f64>,
    /// Approximate observed-data log-likelihood.
    pub loglik: f64,
}

impl Draw {
    pub fn from_state(state: &McmcState, iteration: u64, latent_dims: &[usize], loglik: f64) -> Self {
        let n = state.n_obs();
        let latent = DMatrix::from_fn(latent_dims.len(), n, |r, i| state.z[(latent_dims[r], i)]);
        Draw {
            iteration,
            alloc: state.alloc.iter().map(|&g| g as u32).collect(),
            pi: state.pi.clone(),
            loadings: state.loadings.clone(),
            psi: state.psi.iter().copied().collect(),
            theta: state.theta.clone(),
            latent,
            loglik,
        }
    }

    pub fn groups(&self) -> usize {
        self.pi.len()
    }

    /// λ̃_gdᵀ θ̃_i under this draw.
    pub fn fitted(&self, g: usize, d: usize, i: usize) -> f64 {
        let lam = &self.loadings[g];
        let mut m = lam[(d, 0)];
        for k in 0..self.theta.nrows() {
            m += lam[(d, k + 1)] * self.theta[(k, i)];
        }
        m
    }

    /// Applies a relabeling: old label `g` becomes `perm[g]`.
    pub fn permute(&mut self, perm: &[usize]) {
        let g = self.groups();
        let mut pi = vec![0.0; g];
        let mut loadings = self.loadings.clone();
        for old in 0..g {
            pi[perm[old]] = self.pi[old];
            loadings[perm[old]] = self.loadings[old].clone();
        }
        for a in &mut self.alloc {
            *a = perm[*a as usize] as u32;
        }
        self.pi = pi;
        self.loadings = loadings;
    }
}

/// Thinned posterior draws of one fit plus the layout needed to read them.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub n_obs: usize,
    pub groups: usize,
    pub factors: usize,
    pub latent_dim: usize,
    /// Retained latent dimensions.
    pub active_dims: Vec<usize>,
    /// Retained categorical latent dimensions stored in [`Draw::latent`].
    pub latent_dims: Vec<usize>,
    pub draws: Vec<Draw>,
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn logliks(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.loglik).collect()
    }

    /// Index of the draw with the largest approximate log-likelihood; the
    /// earliest wins ties.
    pub fn max_loglik_draw(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, d) in self.draws.iter().enumerate() {
            if best.is_none_or(|b| d.loglik > self.draws[b].loglik) {
                best = Some(k);
            }
        }
        best
    }

    /// Row of [`Draw::latent`] holding latent dimension `d`.
    pub fn latent_row(&self, d: usize) -> Option<usize> {
        self.latent_dims.iter().position(|&x| x == d)
    }
}
