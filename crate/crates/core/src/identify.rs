//! Identifiability post-processing of posterior draws: label switching is
//! undone by exact assignment against a reference allocation, and rotational
//! invariance of the loadings by orthogonal Procrustes alignment.

use std::io::Write;

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{Error, Result};
use crate::samples::PosteriorSamples;

/// Orthogonal `R` minimizing `‖draw·R − template‖_F`, plus whether
/// `drawᵀ·template` was rank deficient (the rotation is then not unique).
pub fn procrustes_rotation(draw: &DMatrix<f64>, template: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let m = draw.transpose() * template;
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let sv = &svd.singular_values;
    let top = sv.max();
    let deficient = top <= 0.0 || sv.min() <= top * 1e-12;
    (u * v_t, deficient)
}

/// Best permutation of labels so that `alloc` agrees with `reference`:
/// `perm[g]` is the new label of old label `g`. Returns the permutation and
/// the number of disagreements left.
pub fn best_permutation(alloc: &[u32], reference: &[u32], groups: usize) -> (Vec<usize>, usize) {
    let mut overlap = Matrix::new(groups, groups, 0i64);
    for (&a, &r) in alloc.iter().zip(reference) {
        overlap[(a as usize, r as usize)] += 1;
    }
    let (agree, perm) = kuhn_munkres(&overlap);
    (perm, alloc.len() - agree as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelabelingReport {
    pub reference_draw: usize,
    pub permutations: Vec<Vec<usize>>,
    /// Misclassifications against the reference after relabeling.
    pub losses: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationReport {
    pub template_draw: usize,
    /// Per draw, per cluster, `Q × Q`.
    pub rotations: Vec<Vec<DMatrix<f64>>>,
    pub rank_deficient: usize,
}

/// Relabels every draw against `reference` and applies the permutation to
/// π, the loadings and the allocation.
pub fn relabel(samples: &mut PosteriorSamples, reference: &[u32], reference_draw: usize) -> RelabelingReport {
    let mut permutations = Vec::with_capacity(samples.n_draws());
    let mut losses = Vec::with_capacity(samples.n_draws());
    for draw in &mut samples.draws {
        let (perm, loss) = best_permutation(&draw.alloc, reference, samples.groups);
        draw.permute(&perm);
        permutations.push(perm);
        losses.push(loss);
    }
    RelabelingReport {
        reference_draw,
        permutations,
        losses,
    }
}

/// Rotates every draw's loadings towards the per-cluster `templates`
/// (`D × Q`, rows over all latent dimensions). Only retained rows enter the
/// fit; the rotation is applied to whole matrices and to the traits of each
/// cluster's members so that fitted values are unchanged.
pub fn procrustes_align(
    samples: &mut PosteriorSamples,
    templates: &[DMatrix<f64>],
    template_draw: usize,
) -> Result<RotationReport> {
    let q = samples.factors;
    let dims = samples.active_dims.clone();
    if templates.len() != samples.groups || templates.iter().any(|t| t.ncols() != q) {
        return Err(Error::Dimension("template does not match G and Q".into()));
    }
    let restrict = |m: &DMatrix<f64>| DMatrix::from_fn(dims.len(), q, |r, c| m[(dims[r], c)]);
    let targets: Vec<DMatrix<f64>> = templates.iter().map(restrict).collect();
    let mut rotations = Vec::with_capacity(samples.n_draws());
    let mut rank_deficient = 0;
    for draw in &mut samples.draws {
        let mut per_cluster = Vec::with_capacity(samples.groups);
        for g in 0..samples.groups {
            let lam = draw.loadings[g].columns(1, q).into_owned();
            let (r, deficient) = procrustes_rotation(&restrict(&lam), &targets[g]);
            rank_deficient += deficient as usize;
            let rotated = &lam * &r;
            draw.loadings[g].columns_mut(1, q).copy_from(&rotated);
            let r_t = r.transpose();
            for (i, &a) in draw.alloc.iter().enumerate() {
                if a as usize == g {
                    let theta = &r_t * draw.theta.column(i);
                    draw.theta.set_column(i, &theta);
                }
            }
            per_cluster.push(r);
        }
        rotations.push(per_cluster);
    }
    if rank_deficient > 0 {
        log::warn!("{rank_deficient} Procrustes problems had a rank-deficient template; alignment is partial there");
    }
    Ok(RotationReport {
        template_draw,
        rotations,
        rank_deficient,
    })
}

/// Relabels against, then rotates towards, the draw with the largest
/// approximate log-likelihood.
pub fn postprocess(samples: &mut PosteriorSamples) -> Result<(RelabelingReport, RotationReport)> {
    let anchor = samples
        .max_loglik_draw()
        .ok_or_else(|| Error::DegenerateModel("no posterior draws to post-process".into()))?;
    let reference = samples.draws[anchor].alloc.clone();
    let relabeling = relabel(samples, &reference, anchor);
    let q = samples.factors;
    let templates: Vec<DMatrix<f64>> = samples.draws[anchor]
        .loadings
        .iter()
        .map(|l| l.columns(1, q).into_owned())
        .collect();
    let rotation = procrustes_align(samples, &templates, anchor)?;
    Ok((relabeling, rotation))
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// CSV with columns `draw, permutation, loss`; labels are 1-based.
pub fn write_relabeling<W: Write>(report: &RelabelingReport, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["draw", "permutation", "loss"])?;
    for (k, (perm, loss)) in report.permutations.iter().zip(&report.losses).enumerate() {
        out.write_record([k.to_string(), join(perm.iter().map(|g| g + 1)), loss.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// CSV with columns `draw, cluster, rotation` where the rotation is written
/// row-major.
pub fn write_rotations<W: Write>(report: &RotationReport, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["draw", "cluster", "rotation"])?;
    for (k, per_cluster) in report.rotations.iter().enumerate() {
        for (g, r) in per_cluster.iter().enumerate() {
            let flat = join(r.transpose().iter().map(|x| format!("{x:.17e}")));
            out.write_record([k.to_string(), (g + 1).to_string(), flat])?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::Draw;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthogonal(q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0));
        m.qr().q()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn identity_for_identical_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-2.0..2.0));
        let (r, deficient) = procrustes_rotation(&t, &t);
        assert!(!deficient);
        assert!((r - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn recovers_known_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for q in 1..=4 {
            let t = DMatrix::from_fn(9, q, |_, _| rng.random_range(-2.0..2.0));
            let r0 = random_orthogonal(q, &mut rng);
            let draw = &t * &r0;
            let (r, _) = procrustes_rotation(&draw, &t);
            assert!((&r.transpose() * &r - DMatrix::identity(q, q)).amax() < 1e-10);
            assert!((draw * r - &t).amax() < 1e-8);
        }
    }

    #[test]
    fn alignment_beats_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-2.0..2.0));
        let noise = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-0.2..0.2));
        let draw = &t * random_orthogonal(3, &mut rng) + noise;
        let (r, _) = procrustes_rotation(&draw, &t);
        assert!((&draw * r - &t).norm() < (&draw - &t).norm());
    }

    #[test]
    fn zero_template_is_flagged() {
        let draw = DMatrix::from_element(4, 2, 1.0);
        let (r, deficient) = procrustes_rotation(&draw, &DMatrix::zeros(4, 2));
        assert!(deficient);
        assert!((&r.transpose() * &r - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..300 {
            let g = 1 + trial % 5;
            let n = rng.random_range(1..40);
            let alloc: Vec<u32> = (0..n).map(|_| rng.random_range(0..g as u32)).collect();
            let reference: Vec<u32> = (0..n).map(|_| rng.random_range(0..g as u32)).collect();
            let (perm, loss) = best_permutation(&alloc, &reference, g);
            let loss_of = |p: &[usize]| {
                alloc
                    .iter()
                    .zip(&reference)
                    .filter(|(&a, &r)| p[a as usize] != r as usize)
                    .count()
            };
            let brute = permutations(g).iter().map(|p| loss_of(p)).min().unwrap();
            assert_eq!(loss, brute);
            assert_eq!(loss_of(&perm), loss);
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..g).collect::<Vec<_>>());
        }
    }

    fn toy_samples(rng: &mut ChaCha8Rng) -> PosteriorSamples {
        let (n, g, q, d) = (30, 2, 2, 5);
        let truth: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let draws = (0..20)
            .map(|k| {
                let mut alloc = truth.clone();
                alloc[k % n] = 1 - alloc[k % n];
                Draw {
                    iteration: k as u64,
                    alloc,
                    pi: vec![0.4, 0.6],
                    loadings: (0..g)
                        .map(|c| DMatrix::from_fn(d, q + 1, |_, _| rng.random_range(-1.0..1.0) + c as f64))
                        .collect(),
                    psi: vec![1.0; d],
                    theta: DMatrix::from_fn(q, n, |_, _| rng.random_range(-1.0..1.0)),
                    latent: DMatrix::zeros(0, n),
                    loglik: -(k as f64 - 8.0).powi(2),
                }
            })
            .collect();
        PosteriorSamples {
            n_obs: n,
            groups: g,
            factors: q,
            latent_dim: d,
            active_dims: (0..d).collect(),
            latent_dims: vec![],
            draws,
        }
    }

    #[test]
    fn swapped_labels_are_undone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples = toy_samples(&mut rng);
        let original = samples.clone();
        for (k, draw) in samples.draws.iter_mut().enumerate() {
            if k % 2 == 1 {
                draw.permute(&[1, 0]);
            }
        }
        let (relabel, _) = postprocess(&mut samples).unwrap();
        assert_eq!(relabel.reference_draw, 8);
        for (a, b) in samples.draws.iter().zip(&original.draws) {
            assert_eq!(a.alloc, b.alloc);
            assert_eq!(a.pi, b.pi);
            assert_eq!(a.loglik, b.loglik);
        }
    }

    #[test]
    fn rotation_preserves_fit_and_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut samples = toy_samples(&mut rng);
        let before = samples.clone();
        let (_, rot) = postprocess(&mut samples).unwrap();
        assert_eq!(rot.rotations.len(), samples.n_draws());
        for (a, b) in samples.draws.iter().zip(&before.draws) {
            for g in 0..2 {
                let la = a.loadings[g].columns(1, 2).into_owned();
                let lb = b.loadings[g].columns(1, 2).into_owned();
                assert!((&la * la.transpose() - &lb * lb.transpose()).amax() < 1e-8);
            }
            for i in 0..samples.n_obs {
                let g = a.alloc[i] as usize;
                for d in 0..5 {
                    assert!((a.fitted(g, d, i) - b.fitted(g, d, i)).abs() < 1e-10);
                }
            }
        }
        // The template draw is aligned to itself.
        for r in &rot.rotations[rot.template_draw] {
            assert!((r - DMatrix::identity(2, 2)).amax() < 1e-10);
        }
    }

    #[test]
    fn report_csvs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut samples = toy_samples(&mut rng);
        let (relabel, rot) = postprocess(&mut samples).unwrap();
        let mut buf = Vec::new();
        write_relabeling(&relabel, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("draw,permutation,loss\n0,1 2,"));
        let mut buf = Vec::new();
        write_rotations(&rot, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 20 * 2);
    }
}
