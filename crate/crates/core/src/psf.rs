//! PSF estimation: homomorphic magnitude-spectrum recovery and the
//! magnitude-constrained least-squares kernel update.
//!
//! The kernel update solves, frequency by frequency,
//! `min |M_st^(f) - H(f) * M_x^(f)|^2` subject to `|H| = H_tilde`; the
//! minimizer picks the phase of `M_st(f) * conj(M_x(f))` at every bin.
//! The spatial kernel is the inverse transform cropped to a compact
//! support around its energy centroid and scaled to unit Frobenius norm
//! (the blind problem's scale ambiguity is absorbed by the blood image).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier;
use crate::seq::{CasoratiMatrix, Frame2D, SequenceDims};

/// Default spatial support of an estimated kernel.
pub const DEFAULT_PSF_SUPPORT: (usize, usize) = (15, 15);

/// Compact complex PSF kernel plus the magnitude spectrum of its embedding
/// into the frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    kernel: DMatrix<Complex64>,
    mag_spectrum: DMatrix<f64>,
}

impl PsfKernel {
    /// Wraps a kernel and records the magnitude spectrum of its embedding
    /// into an `n_z x n_x` frame.
    pub fn from_kernel(kernel: DMatrix<Complex64>, n_z: usize, n_x: usize) -> Result<Self> {
        if kernel.is_empty() {
            return Err(Error::Argument("empty PSF kernel".into()));
        }
        if kernel.norm() == 0.0 {
            return Err(Error::Argument("PSF kernel has zero energy".into()));
        }
        let spec = fourier::kernel_spectrum(&kernel, n_z, n_x)?;
        let mag_spectrum = spec.map(|v| v.norm());
        Ok(Self {
            kernel,
            mag_spectrum,
        })
    }

    /// Identity kernel: a centered delta.
    pub fn delta(k_z: usize, k_x: usize, n_z: usize, n_x: usize) -> Result<Self> {
        let mut k = DMatrix::zeros(k_z, k_x);
        k[(k_z / 2, k_x / 2)] = Complex64::new(1.0, 0.0);
        Self::from_kernel(k, n_z, n_x)
    }

    pub fn kernel(&self) -> &DMatrix<Complex64> {
        &self.kernel
    }

    /// Magnitude of the kernel's spectrum on the frame grid.
    pub fn mag_spectrum(&self) -> &DMatrix<f64> {
        &self.mag_spectrum
    }

    pub fn support(&self) -> (usize, usize) {
        (self.kernel.nrows(), self.kernel.ncols())
    }

    /// Packs the kernel as a one-frame sequence for "UFD1" export.
    pub fn to_sequence(&self) -> CasoratiMatrix {
        let (k_z, k_x) = self.support();
        let dims = SequenceDims::new(k_z, k_x, 1).expect("kernel dims are positive");
        let data = DMatrix::from_column_slice(k_z * k_x, 1, self.kernel.as_slice());
        CasoratiMatrix::new(data, dims).expect("kernel dims consistent")
    }

    /// Rebuilds a kernel from a one-frame sequence, re-deriving the
    /// magnitude spectrum on an `n_z x n_x` frame grid.
    pub fn from_sequence(seq: &CasoratiMatrix, n_z: usize, n_x: usize) -> Result<Self> {
        let d = seq.dims();
        if d.n_t() != 1 {
            return Err(Error::Argument(format!(
                "PSF sequence must hold exactly one frame, got {}",
                d.n_t()
            )));
        }
        let kernel = seq.frame(0).into_data();
        Self::from_kernel(kernel, n_z, n_x)
    }
}

/// Circular Gaussian smoothing along both axes of a real frequency-plane
/// array; weights wrap around the grid.
fn smooth_periodic(a: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let weights = |n: usize| -> Vec<f64> {
        let mut w: Vec<f64> = (0..n)
            .map(|d| {
                let dist = d.min(n - d) as f64;
                (-0.5 * (dist / sigma).powi(2)).exp()
            })
            .collect();
        let sum: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= sum;
        }
        w
    };
    let (n_z, n_x) = (a.nrows(), a.ncols());
    let wz = weights(n_z);
    let wx = weights(n_x);
    // z pass
    let mut zs = DMatrix::zeros(n_z, n_x);
    for x in 0..n_x {
        for z in 0..n_z {
            let mut acc = 0.0;
            for d in 0..n_z {
                acc += wz[d] * a[((z + d) % n_z, x)];
            }
            zs[(z, x)] = acc;
        }
    }
    // x pass
    let mut out = DMatrix::zeros(n_z, n_x);
    for x in 0..n_x {
        for z in 0..n_z {
            let mut acc = 0.0;
            for d in 0..n_x {
                acc += wx[d] * zs[(z, (x + d) % n_x)];
            }
            out[(z, x)] = acc;
        }
    }
    out
}

/// Estimates the PSF magnitude spectrum from one image by smoothing its
/// log spectrum: `exp(G_sigma * log(|F(img)| + delta))`, max-normalized.
pub fn homomorphic_magnitude(img: &Frame2D, smooth_sigma: f64) -> Result<DMatrix<f64>> {
    if !(smooth_sigma > 0.0) {
        return Err(Error::Argument("smoothing sigma must be positive".into()));
    }
    if img.data().norm() == 0.0 {
        return Err(Error::Argument(
            "homomorphic filtering of an identically zero image".into(),
        ));
    }
    let mag = fourier::fft2_mat(img.data()).map(|v| v.norm());
    let peak = mag.max();
    let delta = 1e-12 * peak;
    let log_mag = mag.map(|v| (v + delta).ln());
    let smoothed = smooth_periodic(&log_mag, smooth_sigma);
    let mut out = smoothed.map(|v| v.exp());
    let m = out.max();
    out /= m;
    Ok(out)
}

/// The spectral solution of the magnitude-constrained fit before any
/// cropping: `H(f) = H_tilde(f) * exp(i * arg(M_st(f) * conj(M_x(f))))`,
/// with phase 0 wherever the product vanishes.
pub fn blind_deconv_spectrum(
    m_st: &Frame2D,
    m_x: &Frame2D,
    h_tilde: &DMatrix<f64>,
) -> Result<DMatrix<Complex64>> {
    let (n_z, n_x) = (m_st.n_z(), m_st.n_x());
    if m_x.n_z() != n_z || m_x.n_x() != n_x || h_tilde.nrows() != n_z || h_tilde.ncols() != n_x {
        return Err(Error::Dimension(
            "blind deconvolution inputs must share the frame grid".into(),
        ));
    }
    if h_tilde.iter().any(|&v| v < 0.0) {
        return Err(Error::Argument("magnitude constraint must be nonnegative".into()));
    }
    if h_tilde.iter().all(|&v| v == 0.0) {
        return Err(Error::Argument("magnitude constraint is identically zero".into()));
    }
    let a = fourier::fft2_mat(m_st.data());
    let b = fourier::fft2_mat(m_x.data());
    let mut h = DMatrix::zeros(n_z, n_x);
    for j in 0..n_x {
        for i in 0..n_z {
            let cross = a[(i, j)] * b[(i, j)].conj();
            let phase = if cross.norm() == 0.0 { 0.0 } else { cross.arg() };
            h[(i, j)] = Complex64::from_polar(h_tilde[(i, j)], phase);
        }
    }
    Ok(h)
}

/// Circular first-moment centroid of the energy image along each axis.
fn energy_centroid(g: &DMatrix<Complex64>) -> (usize, usize) {
    use std::f64::consts::TAU;
    let (n_z, n_x) = (g.nrows(), g.ncols());
    let mut mz = Complex64::default();
    let mut mx = Complex64::default();
    for j in 0..n_x {
        for i in 0..n_z {
            let w = g[(i, j)].norm_sqr();
            mz += w * Complex64::from_polar(1.0, TAU * i as f64 / n_z as f64);
            mx += w * Complex64::from_polar(1.0, TAU * j as f64 / n_x as f64);
        }
    }
    let wrap = |m: Complex64, n: usize| -> usize {
        if m.norm() == 0.0 {
            return 0;
        }
        let frac = m.arg() / TAU; // in (-0.5, 0.5]
        let idx = (frac * n as f64).round() as isize;
        idx.rem_euclid(n as isize) as usize
    };
    (wrap(mz, n_z), wrap(mx, n_x))
}

/// Default-support variant of [`blind_deconv_update_with_support`].
pub fn blind_deconv_update(
    m_st: &Frame2D,
    m_x: &Frame2D,
    h_tilde: &DMatrix<f64>,
) -> Result<PsfKernel> {
    blind_deconv_update_with_support(m_st, m_x, h_tilde, DEFAULT_PSF_SUPPORT)
}

/// Updates the PSF kernel by the per-frequency phase fit, crops the
/// inverse transform to `support` around its energy centroid and rescales
/// to unit Frobenius norm.
pub fn blind_deconv_update_with_support(
    m_st: &Frame2D,
    m_x: &Frame2D,
    h_tilde: &DMatrix<f64>,
    support: (usize, usize),
) -> Result<PsfKernel> {
    let (n_z, n_x) = (m_st.n_z(), m_st.n_x());
    let spectrum = blind_deconv_spectrum(m_st, m_x, h_tilde)?;
    let g = fourier::ifft2_mat(&spectrum);
    let (c_z, c_x) = energy_centroid(&g);
    let k_z = support.0.min(n_z).max(1);
    let k_x = support.1.min(n_x).max(1);
    let mut kernel = DMatrix::zeros(k_z, k_x);
    for j in 0..k_x {
        for i in 0..k_z {
            let z = (c_z + n_z + i - k_z / 2) % n_z;
            let x = (c_x + n_x + j - k_x / 2) % n_x;
            kernel[(i, j)] = g[(z, x)];
        }
    }
    let norm = kernel.norm();
    if norm == 0.0 {
        return Err(Error::Numeric(
            "estimated PSF support captured no energy".into(),
        ));
    }
    kernel /= Complex64::new(norm, 0.0);
    PsfKernel::from_kernel(kernel, n_z, n_x)
}
