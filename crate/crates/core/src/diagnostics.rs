//! Posterior summaries: membership probabilities and uncertainty, Bayesian
//! residuals, a Kolmogorov-Smirnov check, and partition agreement.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::MixedDataset;
use crate::distributions::norm_cdf;
use crate::error::{Error, Result};
use crate::samples::PosteriorSamples;

#[derive(Clone, Debug, PartialEq)]
pub struct MembershipSummary {
    /// `N × G` allocation frequencies over the (relabeled) draws.
    pub probs: DMatrix<f64>,
    /// Most probable cluster; ties go to the lower label.
    pub hard: Vec<usize>,
    /// `1 − max_g P(cluster g)`.
    pub uncertainty: Vec<f64>,
}

pub fn membership_summary(samples: &PosteriorSamples) -> Result<MembershipSummary> {
    let (n, groups) = (samples.n_obs, samples.groups);
    if samples.draws.is_empty() {
        return Err(Error::DegenerateModel("no posterior draws".into()));
    }
    let mut probs = DMatrix::zeros(n, groups);
    for draw in &samples.draws {
        for (i, &g) in draw.alloc.iter().enumerate() {
            probs[(i, g as usize)] += 1.0;
        }
    }
    probs /= samples.n_draws() as f64;
    let mut hard = Vec::with_capacity(n);
    let mut uncertainty = Vec::with_capacity(n);
    for i in 0..n {
        let row = probs.row(i);
        let (best, max) = row.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (g, &p)| if p > acc.1 { (g, p) } else { acc },
        );
        hard.push(best);
        uncertainty.push(1.0 - max);
    }
    Ok(MembershipSummary {
        probs,
        hard,
        uncertainty,
    })
}

/// Writes `id, p_1..p_G, hard, U` with 1-based cluster labels.
pub fn write_membership<W: Write>(summary: &MembershipSummary, ids: &[String], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let groups = summary.probs.ncols();
    let mut header = vec!["id".to_string()];
    header.extend((1..=groups).map(|g| format!("p_{g}")));
    header.extend(["hard".to_string(), "U".to_string()]);
    out.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(summary.probs.row(i).iter().map(|p| p.to_string()));
        row.push((summary.hard[i] + 1).to_string());
        row.push(summary.uncertainty[i].to_string());
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Residual samples indexed by draw, observation and latent dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualCube {
    /// Latent dimensions covered, ascending.
    pub dims: Vec<usize>,
    pub n_obs: usize,
    pub n_draws: usize,
    values: Vec<f64>,
}

impl ResidualCube {
    pub fn get(&self, draw: usize, obs: usize, dim: usize) -> f64 {
        self.values[(draw * self.n_obs + obs) * self.dims.len() + dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean and standard deviation over draws of one cell.
    pub fn cell_moments(&self, obs: usize, dim: usize) -> (f64, f64) {
        let k = self.n_draws as f64;
        let mean = (0..self.n_draws).map(|s| self.get(s, obs, dim)).sum::<f64>() / k;
        let var = (0..self.n_draws)
            .map(|s| (self.get(s, obs, dim) - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0).max(1.0);
        (mean, var.sqrt())
    }

    /// One residual per `(observation, dimension)` cell from a randomly chosen
    /// draw, so the pooled sample is close to independent.
    pub fn pooled_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_obs * self.dims.len());
        for i in 0..self.n_obs {
            for r in 0..self.dims.len() {
                let s = rng.random_range(0..self.n_draws);
                out.push(self.get(s, i, r));
            }
        }
        out
    }
}

/// `(y_ij − λ̃_gjᵀθ̃_i)/√ψ_jj` for every retained continuous variable and
/// draw. With `divide_by_psi` the divisor is `ψ_jj` itself.
pub fn continuous_residuals(samples: &PosteriorSamples, ds: &MixedDataset, divide_by_psi: bool) -> ResidualCube {
    let dims: Vec<usize> = samples
        .active_dims
        .iter()
        .copied()
        .filter(|&d| d < ds.n_continuous())
        .collect();
    let n = samples.n_obs;
    let mut values = Vec::with_capacity(samples.n_draws() * n * dims.len());
    for draw in &samples.draws {
        for i in 0..n {
            let g = draw.alloc[i] as usize;
            for &d in &dims {
                let scale = if divide_by_psi { draw.psi[d] } else { draw.psi[d].sqrt() };
                values.push((ds.continuous()[(i, d)] - draw.fitted(g, d, i)) / scale);
            }
        }
    }
    ResidualCube {
        dims,
        n_obs: n,
        n_draws: samples.n_draws(),
        values,
    }
}

/// `z_ij − λ̃_gjᵀθ̃_i` on every stored categorical latent dimension.
pub fn latent_residuals(samples: &PosteriorSamples) -> ResidualCube {
    let dims = samples.latent_dims.clone();
    let n = samples.n_obs;
    let mut values = Vec::with_capacity(samples.n_draws() * n * dims.len());
    for draw in &samples.draws {
        for i in 0..n {
            let g = draw.alloc[i] as usize;
            for (r, &d) in dims.iter().enumerate() {
                values.push(draw.latent[(r, i)] - draw.fitted(g, d, i));
            }
        }
    }
    ResidualCube {
        dims,
        n_obs: n,
        n_draws: samples.n_draws(),
        values,
    }
}

/// Per-cell latent residual summary; a cell is flagged when its posterior
/// mean residual exceeds `threshold` in absolute value.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualFlag {
    pub obs: usize,
    pub dim: usize,
    pub mean: f64,
    pub sd: f64,
}

pub fn flag_shifted_residuals(cube: &ResidualCube, threshold: f64) -> Vec<ResidualFlag> {
    let mut flags = Vec::new();
    for i in 0..cube.n_obs {
        for (r, &dim) in cube.dims.iter().enumerate() {
            let (mean, sd) = cube.cell_moments(i, r);
            if mean.abs() > threshold {
                flags.push(ResidualFlag { obs: i, dim, mean, sd });
            }
        }
    }
    flags
}

/// Long-format export `id, variable, component, draw, residual` restricted to
/// the observations in `subset`; components are 1-based within a variable.
pub fn write_residuals<W: Write>(cube: &ResidualCube, ds: &MixedDataset, subset: &[usize], writer: W) -> Result<()> {
    let layout = ds.layout();
    let owners = layout.owners();
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["id", "variable", "component", "draw", "residual"])?;
    for &i in subset {
        for (r, &d) in cube.dims.iter().enumerate() {
            let j = owners[d];
            let component = d - layout.slot(j).offset + 1;
            for s in 0..cube.n_draws {
                out.write_record([
                    ds.row_ids()[i].as_str(),
                    ds.variable(j).name.as_str(),
                    &component.to_string(),
                    &s.to_string(),
                    &cube.get(s, i, r).to_string(),
                ])?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail probability `Q_KS(λ)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 2.0;
    let mut prev = 0.0f64;
    for k in 1..=200 {
        let term = sign * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() <= 1e-12 * prev.abs().max(1e-300) || term.abs() < 1e-16 {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        prev = term;
    }
    1.0
}

/// One-sample Kolmogorov-Smirnov test of `sample` against `cdf`.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    let root = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_q((root + 0.12 + 0.11 / root) * d),
    }
}

pub fn ks_test_standard_normal(sample: &[f64]) -> KsResult {
    ks_test(sample, norm_cdf)
}

/// Contingency table of two labelings.
pub fn contingency(p1: &[usize], p2: &[usize]) -> Result<Vec<Vec<u64>>> {
    if p1.len() != p2.len() {
        return Err(Error::Dimension("partitions differ in length".into()));
    }
    let rows = p1.iter().max().map_or(0, |m| m + 1);
    let cols = p2.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; cols]; rows];
    for (&a, &b) in p1.iter().zip(p2) {
        table[a][b] += 1;
    }
    Ok(table)
}

fn pairs(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

struct PairCounts {
    total: f64,
    cells: f64,
    rows: f64,
    cols: f64,
}

fn pair_counts(table: &[Vec<u64>]) -> PairCounts {
    let n: u64 = table.iter().flatten().sum();
    let width = table.iter().map(Vec::len).max().unwrap_or(0);
    let cols: f64 = (0..width)
        .map(|c| pairs(table.iter().map(|r| r.get(c).copied().unwrap_or(0)).sum()))
        .sum();
    PairCounts {
        total: pairs(n),
        cells: table.iter().flatten().map(|&c| pairs(c)).sum(),
        rows: table.iter().map(|r| pairs(r.iter().sum())).sum(),
        cols,
    }
}

/// Rand index from a contingency table.
pub fn rand_index_from_table(table: &[Vec<u64>]) -> f64 {
    let p = pair_counts(table);
    if p.total == 0.0 {
        return 1.0;
    }
    (p.total + 2.0 * p.cells - p.rows - p.cols) / p.total
}

/// Adjusted Rand index from a contingency table (permutation-model
/// expectation). Two trivial partitions that agree score 1.
pub fn adjusted_rand_index_from_table(table: &[Vec<u64>]) -> f64 {
    let p = pair_counts(table);
    if p.total == 0.0 {
        return 1.0;
    }
    let expected = p.rows * p.cols / p.total;
    let max = 0.5 * (p.rows + p.cols);
    if max == expected {
        return 1.0;
    }
    (p.cells - expected) / (max - expected)
}

pub fn rand_index(p1: &[usize], p2: &[usize]) -> Result<f64> {
    Ok(rand_index_from_table(&contingency(p1, p2)?))
}

pub fn adjusted_rand_index(p1: &[usize], p2: &[usize]) -> Result<f64> {
    Ok(adjusted_rand_index_from_table(&contingency(p1, p2)?))
}

/// Writes `metric, value` rows.
pub fn write_metrics<W: Write>(metrics: &[(&str, f64)], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["metric", "value"])?;
    for (name, value) in metrics {
        out.write_record([name.to_string(), value.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
