//! Complex SVD machinery: full and truncated decompositions, singular
//! value thresholding, fixed-rank projection and automatic rank selection.

mod lanczos;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::seq::SequenceDims;

type CMat = DMatrix<Complex64>;

/// Leading singular triplets `A ~ U diag(sigma) V^H`.
///
/// `u` and `v` are column-orthonormal, `sigma` is nonnegative and
/// nonincreasing. `fallback` is set when a truncated decomposition had to
/// be recovered from a full SVD because Lanczos did not converge.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: CMat,
    pub sigma: DVector<f64>,
    pub v: CMat,
    pub fallback: bool,
}

impl SvdFactors {
    /// Number of triplets held.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(sigma) V^H`.
    pub fn reconstruct(&self) -> CMat {
        let mut us = self.u.clone();
        for (k, mut col) in us.column_iter_mut().enumerate() {
            col *= Complex64::new(self.sigma[k], 0.0);
        }
        us * self.v.adjoint()
    }

    fn truncated(mut self, r: usize) -> Self {
        self.u = self.u.columns(0, r).into_owned();
        self.v = self.v.columns(0, r).into_owned();
        self.sigma = DVector::from_iterator(r, self.sigma.iter().take(r).copied());
        self
    }
}

fn ensure_finite(a: &CMat) -> Result<()> {
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numeric("matrix contains non-finite entries".into()));
    }
    Ok(())
}

fn direct_svd(a: CMat) -> SvdFactors {
    let svd = a.svd(true, true);
    SvdFactors {
        u: svd.u.expect("U requested"),
        v: svd.v_t.expect("V^T requested").adjoint(),
        sigma: svd.singular_values,
        fallback: false,
    }
}

/// Full SVD with all `min(m, n)` triplets. Strongly rectangular inputs are
/// reduced by a thin QR factorization first.
pub fn full_svd(a: &CMat) -> Result<SvdFactors> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    if m >= 2 * n {
        let qr = a.clone().qr();
        let mut f = direct_svd(qr.r());
        f.u = qr.q() * f.u;
        Ok(f)
    } else if n >= 2 * m {
        let qr = a.adjoint().qr();
        let f = direct_svd(qr.r());
        Ok(SvdFactors {
            u: f.v,
            v: qr.q() * f.u,
            sigma: f.sigma,
            fallback: false,
        })
    } else {
        Ok(direct_svd(a.clone()))
    }
}

/// Leading `r` singular triplets via Lanczos bidiagonalization with
/// selective reorthogonalization; falls back to a truncated full SVD
/// (flagged in the result) if the iteration does not converge.
pub fn partial_svd(a: &CMat, r: usize) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    let k_max = m.min(n);
    if r < 1 || r > k_max {
        return Err(Error::Argument(format!(
            "requested rank {r} outside 1..={k_max}"
        )));
    }
    ensure_finite(a)?;
    match lanczos::lanczos_partial_svd(a, r) {
        Some(f) => Ok(f),
        None => {
            let mut f = full_svd(a)?.truncated(r);
            f.fallback = true;
            Ok(f)
        }
    }
}

/// Singular value thresholding: `U diag(max(sigma - tau, 0)) V^H`, the
/// proximal operator of `tau * ||.||_*`.
pub fn svt(a: &CMat, tau: f64) -> Result<CMat> {
    Ok(svt_with_nuclear(a, tau)?.0)
}

/// [`svt`] plus the nuclear norm of the thresholded output, reusing the
/// factorization the shrinkage already paid for.
pub(crate) fn svt_with_nuclear(a: &CMat, tau: f64) -> Result<(CMat, f64)> {
    if !(tau >= 0.0) {
        return Err(Error::Argument(format!("svt threshold must be >= 0, got {tau}")));
    }
    let f = full_svd(a)?;
    let kept = f.sigma.iter().take_while(|&&s| s > tau).count();
    if kept == 0 {
        return Ok((CMat::zeros(a.nrows(), a.ncols()), 0.0));
    }
    let nuclear = f.sigma.iter().take(kept).map(|s| s - tau).sum();
    let mut us = f.u.columns(0, kept).into_owned();
    for (k, mut col) in us.column_iter_mut().enumerate() {
        col *= Complex64::new(f.sigma[k] - tau, 0.0);
    }
    Ok((us * f.v.columns(0, kept).adjoint(), nuclear))
}

/// Best rank-`r` Frobenius approximation, computed from the leading
/// partial SVD.
pub fn low_rank_project(a: &CMat, r: usize) -> Result<CMat> {
    let f = partial_svd(a, r)?;
    Ok(f.reconstruct())
}

/// Rank choice minimizing `R(i) = (sigma_{i+1} + sigma_1 sqrt(i / zeta)) / sigma_i`.
#[derive(Debug, Clone)]
pub struct RankEstimate {
    /// Selected rank (1-based index of the minimizing score).
    pub r: usize,
    /// `R(i)` for `i = 1..=i_max`; `scores[0]` is `R(1)`.
    pub scores: Vec<f64>,
    /// `sqrt(N_z * N_x * N_t)`: the fully-observed-data cardinality ratio.
    pub zeta: f64,
}

/// Estimates the tissue rank from the singular spectrum of the Casorati
/// matrix. Indices with `sigma_i <= 1e-14 * sigma_1` are skipped to keep
/// the quotient bounded; ties break toward the smaller rank.
pub fn rank_estimate(sigma: &[f64], dims: SequenceDims) -> Result<RankEstimate> {
    if sigma.len() < 2 {
        return Err(Error::Argument(
            "rank estimation needs at least two singular values".into(),
        ));
    }
    let s1 = sigma[0];
    if !(s1 > 0.0) {
        return Err(Error::Argument(
            "rank estimation of an all-zero spectrum".into(),
        ));
    }
    for w in sigma.windows(2) {
        if w[1] > w[0] + 1e-12 * s1 {
            return Err(Error::Argument("singular values must be nonincreasing".into()));
        }
    }
    if sigma.iter().any(|&s| s < 0.0) {
        return Err(Error::Argument("singular values must be nonnegative".into()));
    }

    let zeta = (dims.n_total() as f64).sqrt();
    let floor = 1e-14 * s1;
    let i_max = (1..sigma.len()).rev().find(|&i| sigma[i - 1] > floor).unwrap_or(0);
    if i_max == 0 {
        return Err(Error::Argument("no admissible rank index".into()));
    }
    let mut scores = Vec::with_capacity(i_max);
    for i in 1..=i_max {
        let r_i = (sigma[i] + s1 * (i as f64 / zeta).sqrt()) / sigma[i - 1];
        scores.push(r_i);
    }
    let mut best = 0usize;
    for (idx, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = idx;
        }
    }
    Ok(RankEstimate {
        r: best + 1,
        scores,
        zeta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_cmat(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMat {
        CMat::from_fn(m, n, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn complex_diag(values: &[f64]) -> CMat {
        let n = values.len();
        CMat::from_fn(n, n, |i, j| {
            if i == j {
                c(values[i], 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
    }

    fn orthonormality_defect(q: &CMat) -> f64 {
        let g = q.adjoint() * q;
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - c(target, 0.0)).norm());
            }
        }
        worst
    }

    #[test]
    fn full_svd_of_diagonal() {
        let f = full_svd(&complex_diag(&[3.0, 2.0, 1.0])).unwrap();
        assert!((f.sigma[0] - 3.0).abs() < 1e-12);
        assert!((f.sigma[1] - 2.0).abs() < 1e-12);
        assert!((f.sigma[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_svd_of_zero_matrix() {
        let f = full_svd(&CMat::zeros(4, 3)).unwrap();
        assert!(f.sigma.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_svd_reconstructs_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let a = random_cmat(&mut rng, 8, 5);
        let f = full_svd(&a).unwrap();
        let err = (&a - f.reconstruct()).norm() / a.norm();
        assert!(err <= 1e-12, "reconstruction error {err}");
        assert!(orthonormality_defect(&f.u) <= 1e-10);
        assert!(orthonormality_defect(&f.v) <= 1e-10);
        for w in f.sigma.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn full_svd_qr_paths_match_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        // tall enough to take the QR route
        let a = random_cmat(&mut rng, 24, 5);
        let f = full_svd(&a).unwrap();
        let err = (&a - f.reconstruct()).norm() / a.norm();
        assert!(err <= 1e-12);
        // and the wide route
        let b = random_cmat(&mut rng, 5, 24);
        let g = full_svd(&b).unwrap();
        let err = (&b - g.reconstruct()).norm() / b.norm();
        assert!(err <= 1e-12);
        assert!(orthonormality_defect(&g.u) <= 1e-10);
        assert!(orthonormality_defect(&g.v) <= 1e-10);
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        let mut a = CMat::zeros(3, 3);
        a[(1, 1)] = c(f64::NAN, 0.0);
        assert!(matches!(full_svd(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn partial_svd_of_diagonal() {
        let f = partial_svd(&complex_diag(&[5.0, 4.0, 3.0, 2.0, 1.0]), 2).unwrap();
        assert_eq!(f.rank(), 2);
        assert!((f.sigma[0] - 5.0).abs() < 1e-10);
        assert!((f.sigma[1] - 4.0).abs() < 1e-10);
    }

    #[test]
    fn partial_svd_of_rank_one_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut u = DVector::from_fn(7, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let mut v = DVector::from_fn(4, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        u *= c(2.0 / u.norm(), 0.0);
        v *= c(3.0 / v.norm(), 0.0);
        let a = &u * v.adjoint();
        let f = partial_svd(&a, 1).unwrap();
        assert!((f.sigma[0] - 6.0).abs() < 1e-10, "sigma {}", f.sigma[0]);
    }

    #[test]
    fn partial_svd_matches_full_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let a = random_cmat(&mut rng, 100, 40);
        let full = full_svd(&a).unwrap();
        let part = partial_svd(&a, 10).unwrap();
        for i in 0..10 {
            let rel = (part.sigma[i] - full.sigma[i]).abs() / full.sigma[i];
            assert!(rel <= 1e-8, "sigma_{i} rel err {rel}");
        }
        assert!(orthonormality_defect(&part.u) <= 1e-10);
        assert!(orthonormality_defect(&part.v) <= 1e-10);
    }

    #[test]
    fn partial_svd_with_all_components_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let a = random_cmat(&mut rng, 12, 8);
        let f = partial_svd(&a, 8).unwrap();
        let err = (&a - f.reconstruct()).norm() / a.norm();
        assert!(err <= 1e-9, "reconstruction err {err}");
    }

    #[test]
    fn partial_svd_subspace_matches_when_gap_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let a = random_cmat(&mut rng, 30, 20);
        let r = 4;
        let full = full_svd(&a).unwrap();
        let gap = full.sigma[r - 1] - full.sigma[r];
        assert!(gap > 1e-8 * full.sigma[0], "test needs a usable gap");
        let part = partial_svd(&a, r).unwrap();
        // largest principal angle between leading left subspaces
        let overlap = full.u.columns(0, r).adjoint() * part.u.columns(0, r);
        let s = full_svd(&overlap.into_owned()).unwrap();
        let cos_min = s.sigma[r - 1].min(1.0);
        let angle = cos_min.acos();
        assert!(angle <= 1e-6, "principal angle {angle}");
    }

    #[test]
    fn partial_svd_range_validation() {
        let a = CMat::zeros(4, 4);
        assert!(matches!(partial_svd(&a, 0), Err(Error::Argument(_))));
        assert!(matches!(partial_svd(&a, 5), Err(Error::Argument(_))));
    }

    #[test]
    fn svt_with_zero_threshold_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let a = random_cmat(&mut rng, 6, 5);
        let out = svt(&a, 0.0).unwrap();
        assert!((&out - &a).norm() / a.norm() <= 1e-12);
    }

    #[test]
    fn svt_at_or_above_sigma1_zeroes_everything() {
        let a = complex_diag(&[2.0, 1.0]);
        let out = svt(&a, 2.0).unwrap();
        assert!(out.norm() == 0.0);
        let out = svt(&a, 5.0).unwrap();
        assert!(out.norm() == 0.0);
    }

    #[test]
    fn svt_shrinks_diagonal_analytically() {
        let out = svt(&complex_diag(&[5.0, 1.0]), 2.0).unwrap();
        assert!((out[(0, 0)] - c(3.0, 0.0)).norm() < 1e-12);
        assert!(out[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn svt_negative_threshold_is_rejected() {
        let a = CMat::zeros(2, 2);
        assert!(matches!(svt(&a, -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn svt_singular_values_match_shrinkage_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        for trial in 0..20 {
            let m = rng.random_range(2..=50);
            let n = rng.random_range(2..=50);
            let a = random_cmat(&mut rng, m, n);
            let full = full_svd(&a).unwrap();
            let tau = rng.random::<f64>() * full.sigma[0];
            let out = svt(&a, tau).unwrap();
            let out_sigma = full_svd(&out).unwrap().sigma;
            for i in 0..full.sigma.len() {
                let expect = (full.sigma[i] - tau).max(0.0);
                assert!(
                    (out_sigma[i] - expect).abs() <= 1e-10,
                    "trial {trial}: sigma_{i} {} vs {expect}",
                    out_sigma[i]
                );
            }
        }
    }

    #[test]
    fn low_rank_project_keeps_exact_rank_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let b = random_cmat(&mut rng, 10, 3);
        let ct = random_cmat(&mut rng, 3, 7);
        let a = &b * &ct; // exact rank 3
        let p = low_rank_project(&a, 3).unwrap();
        assert!((&p - &a).norm() <= 1e-10 * a.norm());
    }

    #[test]
    fn low_rank_project_of_diagonal() {
        let p = low_rank_project(&complex_diag(&[3.0, 2.0, 1.0]), 1).unwrap();
        assert!((p[(0, 0)] - c(3.0, 0.0)).norm() < 1e-10);
        for i in 1..3 {
            assert!(p[(i, i)].norm() < 1e-10);
        }
    }

    #[test]
    fn low_rank_project_residual_equals_tail_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let a = random_cmat(&mut rng, 12, 9);
        let p = low_rank_project(&a, 3).unwrap();
        let full = full_svd(&a).unwrap();
        let tail: f64 = full.sigma.iter().skip(3).map(|s| s * s).sum();
        let resid = (&a - &p).norm_squared();
        assert!((resid - tail).abs() <= 1e-9 * tail, "{resid} vs {tail}");
    }

    #[test]
    fn low_rank_project_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let a = random_cmat(&mut rng, 9, 9);
        let p1 = low_rank_project(&a, 4).unwrap();
        let p2 = low_rank_project(&p1, 4).unwrap();
        assert!((&p2 - &p1).norm() <= 1e-10 * p1.norm());
    }

    #[test]
    fn rank_estimate_finds_planted_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let dims = SequenceDims::new(20, 10, 100).unwrap();
        let b = random_cmat(&mut rng, 200, 5);
        let ct = random_cmat(&mut rng, 5, 100);
        let mut a = &b * &ct;
        let clean_sigma = full_svd(&a).unwrap().sigma;
        let noise_scale = 1e-6 * clean_sigma[0];
        for v in a.iter_mut() {
            *v += c(
                noise_scale * (rng.random::<f64>() - 0.5),
                noise_scale * (rng.random::<f64>() - 0.5),
            );
        }
        let sigma = full_svd(&a).unwrap().sigma;
        let est = rank_estimate(sigma.as_slice(), dims).unwrap();
        assert_eq!(est.r, 5, "scores: {:?}", est.scores);
    }

    #[test]
    fn rank_estimate_with_single_admissible_index() {
        let dims = SequenceDims::new(2, 1, 2).unwrap();
        let est = rank_estimate(&[1.0, 1e-15], dims).unwrap();
        assert_eq!(est.r, 1);
        assert_eq!(est.scores.len(), 1);
    }

    #[test]
    fn rank_estimate_is_scale_invariant() {
        let dims = SequenceDims::new(8, 8, 32).unwrap();
        let sigma = [10.0, 8.0, 5.0, 0.01, 0.005, 0.001];
        let base = rank_estimate(&sigma, dims).unwrap();
        let scaled: Vec<f64> = sigma.iter().map(|s| s * 123.456).collect();
        let est = rank_estimate(&scaled, dims).unwrap();
        assert_eq!(base.r, est.r);
    }

    #[test]
    fn rank_estimate_rejects_zero_spectrum() {
        let dims = SequenceDims::new(4, 4, 4).unwrap();
        assert!(matches!(
            rank_estimate(&[0.0, 0.0], dims),
            Err(Error::Argument(_))
        ));
    }
}
