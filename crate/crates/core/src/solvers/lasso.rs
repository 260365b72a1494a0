//! ADMM solver for the deconvolution LASSO
//! `min ||y - h (*) X||_F^2 + lambda ||X||_1` over complex `X`.
//!
//! Splitting `X = z` gives a least-squares step that diagonalizes in the
//! frequency domain frame by frame, a complex soft threshold for `z` and
//! the usual scaled multiplier update.

use num_complex::Complex64;

use super::{soft_threshold_mat, CMat};
use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::fourier;
use crate::psf::PsfKernel;
use crate::seq::CasoratiMatrix;

/// Minimizes `||y - h (*) X||_F^2 + lambda ||X||_1`; stops when both ADMM
/// residuals fall to `epsilon * ||y||_F` or the inner cap fires.
pub fn lasso_admm(
    y: &CasoratiMatrix,
    h: &PsfKernel,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<CasoratiMatrix> {
    if !(lambda >= 0.0) {
        return Err(Error::Argument(format!("lambda must be >= 0, got {lambda}")));
    }
    cfg.validate()?;
    let dims = y.dims();
    let spec = fourier::kernel_spectrum(h.kernel(), dims.n_z(), dims.n_x())?;
    let (x, _iters) = solve(
        y.data(),
        dims.n_z(),
        dims.n_x(),
        &spec,
        lambda,
        cfg.mu,
        cfg.epsilon,
        cfg.max_inner,
        None,
    );
    y.with_data(x)
}

/// Internal entry point: takes the precomputed kernel spectrum and an
/// optional warm start, returns the sparse iterate and iteration count.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve(
    y: &CMat,
    n_z: usize,
    n_x: usize,
    h_spec: &CMat,
    lambda: f64,
    mu: f64,
    epsilon: f64,
    cap: usize,
    warm: Option<&CMat>,
) -> (CMat, usize) {
    let y_norm = y.norm();
    if y_norm == 0.0 {
        return (CMat::zeros(y.nrows(), y.ncols()), 0);
    }
    let px = n_z * n_x;

    // rhs1 = 2 conj(H) Y_hat per frame; denom = 2 |H|^2 + mu per pixel
    let mut rhs1 = y.clone();
    fourier::fft2_frames_inplace(rhs1.as_mut_slice(), n_z, n_x, true);
    let h = h_spec.as_slice();
    for frame in rhs1.as_mut_slice().chunks_exact_mut(px) {
        for (v, hv) in frame.iter_mut().zip(h) {
            *v *= 2.0 * hv.conj();
        }
    }
    let denom: Vec<f64> = h.iter().map(|hv| 2.0 * hv.norm_sqr() + mu).collect();

    let mut x = warm.cloned().unwrap_or_else(|| CMat::zeros(y.nrows(), y.ncols()));
    let mut z = x.clone();
    let mut w = CMat::zeros(y.nrows(), y.ncols());
    let tol = epsilon * y_norm;
    let mut iters = 0;

    for it in 1..=cap {
        iters = it;
        // x-update: (2 H^H H + mu I) x = 2 H^H y + mu (z - w / mu)
        let mut v = &z - &w / Complex64::new(mu, 0.0);
        fourier::fft2_frames_inplace(v.as_mut_slice(), n_z, n_x, true);
        for (frame, rhs_frame) in v
            .as_mut_slice()
            .chunks_exact_mut(px)
            .zip(rhs1.as_slice().chunks_exact(px))
        {
            for ((vv, rv), dv) in frame.iter_mut().zip(rhs_frame).zip(&denom) {
                *vv = (rv + *vv * mu) / *dv;
            }
        }
        fourier::fft2_frames_inplace(v.as_mut_slice(), n_z, n_x, false);
        x = v;

        let z_prev = z;
        z = soft_threshold_mat(&(&x + &w / Complex64::new(mu, 0.0)), lambda / mu);
        let primal = (&x - &z).norm();
        let dual = mu * (&z - &z_prev).norm();
        w += (&x - &z) * Complex64::new(mu, 0.0);
        if primal <= tol && dual <= tol {
            break;
        }
    }
    // the split variable carries the exact zeros
    (z, iters)
}
