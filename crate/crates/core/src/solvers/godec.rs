//! GoDec: alternating randomized low-rank projection and entry-wise hard
//! thresholding.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{zero_result, CMat, DecompositionResult, TraceRecord};
use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::seq::CasoratiMatrix;

/// GoDec power-iteration count for the bilateral random projection.
const POWER_ITERATIONS: usize = 2;

fn random_gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    let normal = StandardNormal;
    DMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(normal.sample(rng), normal.sample(rng))
    })
}

/// Rank-`r` approximation of `z` by bilateral random projection with
/// power iterations, re-orthonormalized by thin QR at every pass.
fn brp_low_rank(z: &CMat, r: usize, rng: &mut ChaCha8Rng) -> CMat {
    let omega = random_gaussian(rng, z.ncols(), r);
    let mut q = (z * omega).qr().q();
    for _ in 0..POWER_ITERATIONS {
        let q2 = (z.adjoint() * &q).qr().q();
        q = (z * q2).qr().q();
    }
    &q * (q.adjoint() * z)
}

fn hard_threshold(m: &CMat, tau: f64) -> CMat {
    m.map(|v| {
        if v.norm() > tau {
            v
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Alternates `L <- rank-r_g approx of S - B` and
/// `B <- hard_threshold(S - L, tau_g)` until the blood iterate settles.
pub fn godec(
    s: &CasoratiMatrix,
    r_g: usize,
    tau_g: f64,
    cfg: &SolverConfig,
) -> Result<DecompositionResult> {
    cfg.validate()?;
    let min_dim = s.data().nrows().min(s.data().ncols());
    if r_g < 1 || r_g > min_dim {
        return Err(Error::Argument(format!(
            "godec rank must lie in 1..={min_dim}, got {r_g}"
        )));
    }
    if !(tau_g >= 0.0) {
        return Err(Error::Argument(format!("tau_g must be >= 0, got {tau_g}")));
    }

    let scale = s.data().norm();
    if scale == 0.0 {
        return Ok(zero_result(s, None));
    }

    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut low = CMat::zeros(s.data().nrows(), s.data().ncols());
    let mut sparse = CMat::zeros(s.data().nrows(), s.data().ncols());
    let mut trace = Vec::new();
    let mut converged = false;

    for it in 1..=cfg.max_outer {
        let z = s.data() - &sparse;
        low = brp_low_rank(&z, r_g, &mut rng);
        let new_sparse = hard_threshold(&(s.data() - &low), tau_g);
        let delta = (&new_sparse - &sparse).norm();
        sparse = new_sparse;
        let objective = (s.data() - &low - &sparse).norm_squared();
        trace.push(TraceRecord {
            iteration: it,
            objective,
            delta_x: delta,
            seconds: start.elapsed().as_secs_f64(),
        });
        if delta <= cfg.epsilon * scale {
            converged = true;
            break;
        }
    }

    Ok(DecompositionResult {
        blood_x: s.with_data(sparse)?,
        tissue_t: s.with_data(low)?,
        psf: None,
        trace,
        converged,
    })
}
