//! Fast BD-RPCA: the nuclear norm is replaced by a fixed-rank constraint,
//! so the tissue step becomes a partial-SVD projection and the blood step
//! a LASSO subproblem.
//!
//! Per outer iteration:
//!   1. average the tissue residual and re-estimate the PSF (unless an
//!      external kernel is supplied),
//!   2. T <- best rank-r_f approximation of S - H(*)X,
//!   3. X <- LASSO(S - T, H, lambda),
//! stopping when ||X^(k+1) - X^(k)||_F <= epsilon ||S||_F.

use super::lasso;
use super::{
    estimate_psf, l1_norm, truncate_factors, zero_result, DecompositionResult, TraceRecord,
};
use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::fourier;
use crate::linalg;
use crate::psf::PsfKernel;
use crate::seq::CasoratiMatrix;

pub fn fast_bdrpca(s: &CasoratiMatrix, cfg: &SolverConfig) -> Result<DecompositionResult> {
    fast_bdrpca_with_psf(s, cfg, None)
}

/// Fast solver with an optional externally supplied PSF; when given, the
/// blind update step is skipped and the kernel held fixed.
pub fn fast_bdrpca_with_psf(
    s: &CasoratiMatrix,
    cfg: &SolverConfig,
    fixed_psf: Option<&PsfKernel>,
) -> Result<DecompositionResult> {
    cfg.validate()?;
    let dims = s.dims();
    let (n_z, n_x) = (dims.n_z(), dims.n_x());
    let scale = s.data().norm();
    if scale == 0.0 {
        return Ok(zero_result(s, fixed_psf.cloned()));
    }

    let start = std::time::Instant::now();
    let sd = s.data();

    // initialization: SVD split of S at the fixed rank
    let full = linalg::full_svd(sd)?;
    let r_f = match cfg.r_f {
        Some(r) => {
            if r < 1 || r > full.rank() {
                return Err(Error::Argument(format!(
                    "r_f must lie in 1..={}, got {r}",
                    full.rank()
                )));
            }
            r
        }
        None => linalg::rank_estimate(full.sigma.as_slice(), dims)?.r,
    };
    let mut tissue = truncate_factors(&full, r_f);
    let mut x = sd - &tissue;

    let mut psf = fixed_psf.cloned();
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut converged = false;
    let mut first_objective = None;

    for outer in 1..=cfg.max_outer {
        let kernel = match fixed_psf {
            Some(k) => k.clone(),
            None => estimate_psf(sd, &tissue, &x, n_z, n_x, cfg)?,
        };
        let h_spec = fourier::kernel_spectrum(kernel.kernel(), n_z, n_x)?;
        psf = Some(kernel);

        // tissue step: rank-r_f projection of S - H(*)X
        let hx = fourier::filter_frames(&x, n_z, n_x, &h_spec, false);
        tissue = linalg::low_rank_project(&(sd - &hx), r_f)?;

        // blood step: warm-started LASSO on S - T
        let y = sd - &tissue;
        let (x_new, _iters) = lasso::solve(
            &y,
            n_z,
            n_x,
            &h_spec,
            cfg.lambda,
            cfg.mu,
            cfg.epsilon,
            cfg.max_inner,
            Some(&x),
        );
        let delta = (&x_new - &x).norm();
        x = x_new;

        let hx = fourier::filter_frames(&x, n_z, n_x, &h_spec, false);
        let objective = (sd - &hx - &tissue).norm_squared() + cfg.lambda * l1_norm(&x);
        trace.push(TraceRecord {
            iteration: outer,
            objective,
            delta_x: delta,
            seconds: start.elapsed().as_secs_f64(),
        });
        let first = *first_objective.get_or_insert(objective);
        if objective > 10.0 * first {
            return Err(Error::Divergence(format!(
                "objective grew to {objective:.3e} from {first:.3e} at outer iteration {outer}"
            )));
        }
        if delta <= cfg.epsilon * scale {
            converged = true;
            break;
        }
    }

    Ok(DecompositionResult {
        blood_x: s.with_data(x)?,
        tissue_t: s.with_data(tissue)?,
        psf,
        trace,
        converged,
    })
}
