//! Random-variate kernels and densities used by the Gibbs sweep.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf;

use crate::error::{Error, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Open interval on the extended real line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationInterval {
    lower: f64,
    upper: f64,
}

impl TruncationInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper || lower == f64::INFINITY {
            return Err(Error::InvalidInterval { lower, upper });
        }
        Ok(TruncationInterval { lower, upper })
    }

    pub const FULL: TruncationInterval = TruncationInterval {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub const NEGATIVE: TruncationInterval = TruncationInterval {
        lower: f64::NEG_INFINITY,
        upper: 0.0,
    };

    pub const POSITIVE: TruncationInterval = TruncationInterval {
        lower: 0.0,
        upper: f64::INFINITY,
    };

    pub fn above(lower: f64) -> Self {
        TruncationInterval {
            lower,
            upper: f64::INFINITY,
        }
    }

    pub fn below(upper: f64) -> Self {
        TruncationInterval {
            lower: f64::NEG_INFINITY,
            upper,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }
}

/// Standardized bound beyond which the tail is sampled by rejection.
const TAIL_CUTOFF: f64 = 5.0;

/// Draws from N(mean, sd²) restricted to `iv`.
///
/// Inverse-CDF is used while the interval touches the bulk of the density;
/// intervals lying entirely beyond five standard deviations fall back to
/// exponential rejection (Robert, 1995), which stays exact in the far tail.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, iv: TruncationInterval, rng: &mut R) -> f64 {
    debug_assert!(sd > 0.0);
    let a = (iv.lower - mean) / sd;
    let b = (iv.upper - mean) / sd;
    let x = if a >= TAIL_CUTOFF {
        standard_tail(a, b, rng)
    } else if b <= -TAIL_CUTOFF {
        -standard_tail(-b, -a, rng)
    } else {
        standard_inverse_cdf(a, b, rng)
    };
    clamp_open(mean + sd * x, iv)
}

pub fn try_sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    iv: TruncationInterval,
    rng: &mut R,
) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::NonPositiveParameter(format!("sd = {sd}")));
    }
    if !mean.is_finite() {
        return Err(Error::NonPositiveParameter(format!("mean = {mean}")));
    }
    Ok(sample_truncated_normal(mean, sd, iv, rng))
}

fn standard_inverse_cdf<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if a > 0.0 {
        // Work in the upper tail through the survival function.
        let qa = norm_cdf(-a);
        let qb = norm_cdf(-b);
        let q = qa - u * (qa - qb);
        if q > 0.0 {
            -norm_quantile(q)
        } else {
            a
        }
    } else {
        let pa = norm_cdf(a);
        let pb = norm_cdf(b);
        let p = pa + u * (pb - pa);
        if p > 0.0 && p < 1.0 {
            norm_quantile(p)
        } else if p <= 0.0 {
            a.max(-40.0)
        } else {
            b.min(40.0)
        }
    }
}

/// Standard normal restricted to (a, b) with a ≥ 5.
fn standard_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b - a < 1e-2 / a {
        // Density is nearly linear across a very short interval.
        loop {
            let u: f64 = rng.random();
            let x = a + u * (b - a);
            let accept = (-0.5 * (x * x - a * a)).exp();
            if rng.random::<f64>() <= accept {
                return x;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let x = a + e / rate;
        if x >= b {
            continue;
        }
        let log_accept = -0.5 * (x - rate).powi(2);
        let u: f64 = rng.random();
        if u.ln() <= log_accept {
            return x;
        }
    }
}

fn clamp_open(x: f64, iv: TruncationInterval) -> f64 {
    if iv.contains(x) {
        return x;
    }
    if x <= iv.lower {
        let up = iv.lower.next_up();
        if up < iv.upper {
            return up;
        }
    } else {
        let down = iv.upper.next_down();
        if down > iv.lower {
            return down;
        }
    }
    0.5 * (iv.lower + iv.upper)
}

pub fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws from MVN(mean, cov).
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(Error::Dimension("covariance does not match mean".into()));
    }
    let chol = Cholesky::new(cov.clone()).ok_or(Error::NonSpdCovariance)?;
    let eps = DVector::from_fn(mean.len(), |_, _| sample_standard_normal(rng));
    Ok(mean + chol.l() * eps)
}

/// Draws from MVN(P⁻¹ b, P⁻¹) given the precision P and the linear term b.
///
/// This is the shape every conjugate Gaussian full conditional takes.
pub fn sample_mvn_canonical<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = Cholesky::new(precision).ok_or(Error::NonSpdCovariance)?;
    Ok(sample_with_precision_factor(&chol, linear, rng))
}

/// As [`sample_mvn_canonical`] with an already factorized precision.
pub fn sample_with_precision_factor<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mean = chol.solve(linear);
    let eps = DVector::from_fn(linear.len(), |_, _| sample_standard_normal(rng));
    // P = L Lᵀ, so Lᵀ x = ε gives x ~ N(0, P⁻¹).
    let noise = chol
        .l_dirty()
        .tr_solve_lower_triangular(&eps)
        .expect("cholesky factor is invertible");
    mean + noise
}

/// Draws from Gamma(shape, rate) on the log scale; stable for tiny shapes.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("shape > 0").sample(rng);
        g.ln()
    } else {
        // Gamma(a) = Gamma(a + 1) · U^(1/a)
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("shape > 0").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

/// Draws a probability vector from Dirichlet(alpha). Every entry is strictly
/// positive and the vector sums to one.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::Dimension("empty Dirichlet parameter".into()));
    }
    if let Some(bad) = alpha.iter().find(|&&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::NonPositiveParameter(format!("Dirichlet alpha = {bad}")));
    }
    let logs: Vec<f64> = alpha.iter().map(|&a| sample_log_gamma(a, rng)).collect();
    Ok(normalize_log_weights(&logs))
}

/// exp-normalizes log weights, flooring entries at the smallest positive
/// double so that no component is exactly zero.
pub fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logs.iter().map(|&l| (l - max).exp().max(f64::MIN_POSITIVE)).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Draws from InverseGamma(shape, scale), density ∝ x^(-shape-1) e^(-scale/x).
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(Error::NonPositiveParameter(format!(
            "inverse gamma shape = {shape}, scale = {scale}"
        )));
    }
    let g: f64 = Gamma::new(shape, 1.0 / scale).expect("validated").sample(rng);
    Ok(1.0 / g.max(f64::MIN_POSITIVE))
}

/// Draws an index with the given probabilities.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::Dimension("empty probability vector".into()));
    }
    if probs.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::NonPositiveParameter("negative probability".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::NonPositiveParameter(format!("probabilities sum to {total}")));
    }
    Ok(categorical_index(probs, total, rng))
}

pub(crate) fn categorical_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * (x - mean).powi(2) / var
}

/// Exact MVN log-density through a Cholesky factorization of `cov`.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let d = x.len();
    if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(Error::Dimension("mvn_logpdf dimensions disagree".into()));
    }
    let chol = Cholesky::new(cov.clone()).ok_or(Error::NonSpdCovariance)?;
    let r = x - mean;
    let w = chol
        .l_dirty()
        .solve_lower_triangular(&r)
        .ok_or(Error::NonSpdCovariance)?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (d as f64) * (2.0 * PI).ln() - 0.5 * log_det - 0.5 * w.norm_squared())
}

/// Gaussian with covariance ΛΛᵀ + Ψ (Ψ diagonal), evaluated in the Q-dim
/// factor space via the Woodbury identity and the matrix determinant lemma.
#[derive(Clone, Debug)]
pub struct FactorGaussian {
    mean: DVector<f64>,
    loadings: DMatrix<f64>,
    inv_psi: DVector<f64>,
    /// Cholesky factor of I + ΛᵀΨ⁻¹Λ.
    inner: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl FactorGaussian {
    pub fn new(mean: DVector<f64>, loadings: DMatrix<f64>, psi: &DVector<f64>) -> Result<Self> {
        let d = mean.len();
        if loadings.nrows() != d || psi.len() != d {
            return Err(Error::Dimension("factor gaussian dimensions disagree".into()));
        }
        if psi.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::NonSpdCovariance);
        }
        let q = loadings.ncols();
        let inv_psi = psi.map(|p| 1.0 / p);
        let scaled = DMatrix::from_fn(d, q, |r, c| loadings[(r, c)] * inv_psi[r]);
        let mut m = loadings.tr_mul(&scaled);
        for k in 0..q {
            m[(k, k)] += 1.0;
        }
        let inner = Cholesky::new(m).ok_or(Error::NonSpdCovariance)?;
        let log_det_m: f64 = 2.0 * inner.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det_psi: f64 = psi.iter().map(|p| p.ln()).sum();
        let log_norm = -(d as f64) * LN_SQRT_2PI - 0.5 * (log_det_psi + log_det_m);
        Ok(FactorGaussian {
            mean,
            loadings,
            inv_psi,
            inner,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log-density at `x`, given as an iterator-friendly slice.
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        let q = self.loadings.ncols();
        let mut quad = 0.0;
        let mut proj = DVector::zeros(q);
        for r in 0..d {
            let res = x[r] - self.mean[r];
            let w = res * self.inv_psi[r];
            quad += res * w;
            for k in 0..q {
                proj[k] += self.loadings[(r, k)] * w;
            }
        }
        let v = self
            .inner
            .l_dirty()
            .solve_lower_triangular(&proj)
            .expect("cholesky factor is invertible");
        self.log_norm - 0.5 * (quad - v.norm_squared())
    }

    /// Dense covariance ΛΛᵀ + Ψ.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut cov = &self.loadings * self.loadings.transpose();
        for r in 0..self.dim() {
            cov[(r, r)] += 1.0 / self.inv_psi[r];
        }
        cov
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn untruncated_mean() {
        let mut r = rng();
        let n = 100_000;
        let m: f64 = (0..n)
            .map(|_| sample_truncated_normal(2.0, 3.0, TruncationInterval::FULL, &mut r))
            .sum::<f64>()
            / n as f64;
        assert!((m - 2.0).abs() < 4.0 * 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn half_normal_mean() {
        // φ(0) / (1 − Φ(0)) = √(2/π)
        let expected = (2.0 / PI).sqrt();
        assert!((expected - 0.7979).abs() < 1e-4);
        let mut r = rng();
        let n = 100_000;
        let m: f64 = (0..n)
            .map(|_| sample_truncated_normal(0.0, 1.0, TruncationInterval::POSITIVE, &mut r))
            .sum::<f64>()
            / n as f64;
        assert!((m - expected).abs() < 0.01, "{m}");
    }

    #[test]
    fn negative_support() {
        let mut r = rng();
        for _ in 0..10_000 {
            assert!(sample_truncated_normal(0.0, 1.0, TruncationInterval::NEGATIVE, &mut r) < 0.0);
        }
    }

    #[test]
    fn extreme_tails_stay_inside() {
        let mut r = rng();
        for &(mean, iv) in &[
            (0.0, TruncationInterval::above(12.0)),
            (0.0, TruncationInterval::below(-30.0)),
            (-50.0, TruncationInterval::POSITIVE),
            (50.0, TruncationInterval::NEGATIVE),
            (0.0, TruncationInterval::new(8.0, 8.0 + 1e-9).unwrap()),
            (0.0, TruncationInterval::new(1.0, 1.0 + 1e-15).unwrap()),
        ] {
            for _ in 0..1000 {
                let x = sample_truncated_normal(mean, 1.0, iv, &mut r);
                assert!(iv.contains(x), "{x} outside {iv:?}");
            }
        }
    }

    #[test]
    fn far_tail_mean_matches_mills_ratio() {
        // E[X | X > a] = φ(a)/(1 − Φ(a)); for a = 6 this is ≈ 6.1584.
        let a = 6.0_f64;
        let phi = (-0.5 * a * a).exp() / (2.0 * PI).sqrt();
        let tail = 0.5 * erf::erfc(a / std::f64::consts::SQRT_2);
        let expected = phi / tail;
        let mut r = rng();
        let n = 50_000;
        let m: f64 = (0..n)
            .map(|_| sample_truncated_normal(0.0, 1.0, TruncationInterval::above(a), &mut r))
            .sum::<f64>()
            / n as f64;
        assert!((m - expected).abs() < 0.01, "{m} vs {expected}");
    }

    #[test]
    fn invalid_intervals() {
        assert!(TruncationInterval::new(1.0, 1.0).is_err());
        assert!(TruncationInterval::new(2.0, 1.0).is_err());
        assert!(TruncationInterval::new(f64::NAN, 1.0).is_err());
        assert!(try_sample_truncated_normal(0.0, 0.0, TruncationInterval::FULL, &mut rng()).is_err());
    }

    #[test]
    fn dirichlet_symmetric_mean() {
        let mut r = rng();
        let n = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let p = sample_dirichlet(&[1.0, 1.0], &mut r).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            acc[0] += p[0];
            acc[1] += p[1];
        }
        assert!((acc[0] / n as f64 - 0.5).abs() < 0.01);
        assert!((acc[1] / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn dirichlet_tiny_alpha_stays_positive() {
        let mut r = rng();
        for _ in 0..10_000 {
            let p = sample_dirichlet(&[0.01, 0.01, 0.01], &mut r).unwrap();
            assert!(p.iter().all(|&x| x > 0.0));
        }
        assert!(sample_dirichlet(&[1.0, 0.0], &mut r).is_err());
    }

    #[test]
    fn mvn_identity_covariance() {
        let mut r = rng();
        let n = 100_000;
        let mean = DVector::zeros(2);
        let cov = DMatrix::identity(2, 2);
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = sample_mvn(&mean, &cov, &mut r).unwrap();
            acc += &x * x.transpose();
        }
        acc /= n as f64;
        assert!((acc - DMatrix::identity(2, 2)).abs().max() < 0.02);
        assert!(matches!(
            sample_mvn(&mean, &(-cov), &mut r),
            Err(Error::NonSpdCovariance)
        ));
    }

    #[test]
    fn canonical_form_mean_and_variance() {
        // P = [[2, 0.5], [0.5, 1]], b = (1, 1): mean P⁻¹b, covariance P⁻¹.
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let inv = p.clone().try_inverse().unwrap();
        let mean = &inv * &b;
        let mut r = rng();
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n)
            .map(|_| sample_mvn_canonical(p.clone(), &b, &mut r).unwrap())
            .collect();
        let m = draws.iter().fold(DVector::zeros(2), |acc, x| acc + x) / n as f64;
        assert!((&m - &mean).abs().max() < 0.01);
        let cov = draws
            .iter()
            .fold(DMatrix::zeros(2, 2), |acc, x| acc + (x - &m) * (x - &m).transpose())
            / n as f64;
        assert!((cov - inv).abs().max() < 0.01);
    }

    #[test]
    fn inverse_gamma_mode() {
        // Mode of IG(7, 7) is 7 / 8.
        let mut r = rng();
        let n = 200_000;
        let width = 0.025;
        let mut hist = vec![0usize; 200];
        for _ in 0..n {
            let x = sample_inverse_gamma(7.0, 7.0, &mut r).unwrap();
            let b = (x / width) as usize;
            if b < hist.len() {
                hist[b] += 1;
            }
        }
        let peak = (0..hist.len()).max_by_key(|&b| hist[b]).unwrap();
        let mode = (peak as f64 + 0.5) * width;
        assert!((mode - 0.875).abs() < 0.05, "{mode}");
        assert!(sample_inverse_gamma(0.0, 1.0, &mut r).is_err());
    }

    #[test]
    fn categorical_frequencies() {
        let mut r = rng();
        let probs = [0.2, 0.5, 0.3];
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_categorical(&probs, &mut r).unwrap()] += 1;
        }
        for k in 0..3 {
            assert!((counts[k] as f64 / n as f64 - probs[k]).abs() < 0.01);
        }
        assert!(sample_categorical(&[0.5, 0.6], &mut r).is_err());
        assert_eq!(sample_categorical(&[0.0, 1.0], &mut r).unwrap(), 1);
    }

    #[test]
    fn mvn_logpdf_cases() {
        let x = DVector::from_vec(vec![0.0]);
        let v = mvn_logpdf(&x, &x, &DMatrix::identity(1, 1)).unwrap();
        assert!((v + 0.918_938_5).abs() < 1e-7);

        let x = DVector::from_vec(vec![0.3, -1.2]);
        let mean = DVector::from_vec(vec![1.0, 0.5]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.7]));
        let joint = mvn_logpdf(&x, &mean, &cov).unwrap();
        let split = normal_logpdf(0.3, 1.0, 2.0) + normal_logpdf(-1.2, 0.5, 0.7);
        assert!((joint - split).abs() < 1e-12);
    }

    #[test]
    fn mvn_logpdf_matches_dense_quadratic_form() {
        let mut r = rng();
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| sample_standard_normal(&mut r));
            let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
            let x = DVector::from_fn(3, |_, _| sample_standard_normal(&mut r));
            let mean = DVector::from_fn(3, |_, _| sample_standard_normal(&mut r));
            let inv = cov.clone().try_inverse().unwrap();
            let det = cov.determinant();
            let res = &x - &mean;
            let oracle = -1.5 * (2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * (res.transpose() * inv * &res)[0];
            let got = mvn_logpdf(&x, &mean, &cov).unwrap();
            assert!((got - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn factor_gaussian_matches_dense() {
        let mut r = rng();
        for &(d, q) in &[(1, 1), (5, 2), (20, 3), (50, 10)] {
            let mean = DVector::from_fn(d, |_, _| sample_standard_normal(&mut r));
            let lam = DMatrix::from_fn(d, q, |_, _| sample_standard_normal(&mut r));
            let psi = DVector::from_fn(d, |_, _| 0.2 + r.random::<f64>());
            let fg = FactorGaussian::new(mean.clone(), lam, &psi).unwrap();
            let cov = fg.covariance();
            let x = DVector::from_fn(d, |_, _| 2.0 * sample_standard_normal(&mut r));
            let dense = mvn_logpdf(&x, &mean, &cov).unwrap();
            assert!((fg.logpdf(x.as_slice()) - dense).abs() < 1e-8, "d={d}");
        }
    }

    #[test]
    fn seeded_draws_reproduce() {
        let a: Vec<f64> = {
            let mut r = rng();
            (0..100)
                .map(|_| sample_truncated_normal(0.3, 1.2, TruncationInterval::above(0.5), &mut r))
                .collect()
        };
        let b: Vec<f64> = {
            let mut r = rng();
            (0..100)
                .map(|_| sample_truncated_normal(0.3, 1.2, TruncationInterval::above(0.5), &mut r))
                .collect()
        };
        assert_eq!(a, b);
    }
}
