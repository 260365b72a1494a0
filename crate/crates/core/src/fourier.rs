//! Per-frame 2D FFT and circulant 2D convolution as a spectral product.
//!
//! Convention: unnormalized forward transform, inverse scaled by
//! `1/(N_z*N_x)`. The convolution kernel is embedded into the frame grid
//! with its center pixel at index (0, 0) under circular wrap, so a centered
//! delta kernel is exactly the identity operator.

use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::psf::PsfKernel;
use crate::seq::{CasoratiMatrix, Frame2D};

/// Frequency-domain counterpart of a [`Frame2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    data: DMatrix<Complex64>,
}

impl Spectrum2D {
    pub fn new(data: DMatrix<Complex64>) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<Complex64> {
        self.data
    }
}

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    let mut planner = PLANNER
        .get_or_init(|| Mutex::new(FftPlanner::new()))
        .lock()
        .expect("fft planner lock");
    if forward {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    }
}

fn transpose_into(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    for c in 0..cols {
        for r in 0..rows {
            dst[r * cols + c] = src[c * rows + r];
        }
    }
}

/// In-place 2D FFT of every length `n_z*n_x` column-major frame in `buf`.
pub(crate) fn fft2_frames_inplace(buf: &mut [Complex64], n_z: usize, n_x: usize, forward: bool) {
    let px = n_z * n_x;
    debug_assert!(px > 0 && buf.len() % px == 0);
    // z pass: frame columns are contiguous, one batched call covers all frames
    plan(n_z, forward).process(buf);
    // x pass per frame via transpose
    let fft_x = plan(n_x, forward);
    let mut scratch = vec![Complex64::default(); px];
    for frame in buf.chunks_exact_mut(px) {
        transpose_into(frame, n_z, n_x, &mut scratch);
        fft_x.process(&mut scratch);
        transpose_into(&scratch, n_x, n_z, frame);
    }
    if !forward {
        let scale = 1.0 / px as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

pub(crate) fn fft2_mat(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mut out = m.clone();
    fft2_frames_inplace(out.as_mut_slice(), m.nrows(), m.ncols(), true);
    out
}

pub(crate) fn ifft2_mat(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mut out = m.clone();
    fft2_frames_inplace(out.as_mut_slice(), m.nrows(), m.ncols(), false);
    out
}

/// Unnormalized forward 2D transform of one frame.
pub fn fft2(f: &Frame2D) -> Spectrum2D {
    Spectrum2D::new(fft2_mat(f.data()))
}

/// Inverse of [`fft2`], scaled by `1/(N_z*N_x)`.
pub fn ifft2(s: &Spectrum2D) -> Frame2D {
    Frame2D::new(ifft2_mat(s.data()))
}

/// Embeds a `K_z x K_x` kernel into an `n_z x n_x` grid with its center
/// pixel at (0, 0) and circular wrap.
pub(crate) fn embed_kernel(
    kernel: &DMatrix<Complex64>,
    n_z: usize,
    n_x: usize,
) -> Result<DMatrix<Complex64>> {
    let (k_z, k_x) = (kernel.nrows(), kernel.ncols());
    if k_z > n_z || k_x > n_x {
        return Err(Error::Argument(format!(
            "kernel {k_z}x{k_x} larger than frame {n_z}x{n_x}"
        )));
    }
    let (c_z, c_x) = (k_z / 2, k_x / 2);
    let mut padded = DMatrix::zeros(n_z, n_x);
    for j in 0..k_x {
        for i in 0..k_z {
            let z = (i + n_z - c_z) % n_z;
            let x = (j + n_x - c_x) % n_x;
            padded[(z, x)] = kernel[(i, j)];
        }
    }
    Ok(padded)
}

/// Spectrum of the kernel embedded into an `n_z x n_x` frame grid.
pub(crate) fn kernel_spectrum(
    kernel: &DMatrix<Complex64>,
    n_z: usize,
    n_x: usize,
) -> Result<DMatrix<Complex64>> {
    Ok(fft2_mat(&embed_kernel(kernel, n_z, n_x)?))
}

/// Applies `spectrum -> spectrum * filter` (or times `conj(filter)`) to
/// every frame of the raw Casorati buffer.
pub(crate) fn filter_frames(
    data: &DMatrix<Complex64>,
    n_z: usize,
    n_x: usize,
    filter: &DMatrix<Complex64>,
    conjugate: bool,
) -> DMatrix<Complex64> {
    let mut out = data.clone();
    let px = n_z * n_x;
    let f = filter.as_slice();
    {
        let buf = out.as_mut_slice();
        fft2_frames_inplace(buf, n_z, n_x, true);
        for frame in buf.chunks_exact_mut(px) {
            if conjugate {
                for (v, h) in frame.iter_mut().zip(f) {
                    *v *= h.conj();
                }
            } else {
                for (v, h) in frame.iter_mut().zip(f) {
                    *v *= h;
                }
            }
        }
        fft2_frames_inplace(buf, n_z, n_x, false);
    }
    out
}

/// Circulant 2D convolution of every frame with the shared PSF kernel.
pub fn conv2_circ(x: &CasoratiMatrix, h: &PsfKernel) -> Result<CasoratiMatrix> {
    let dims = x.dims();
    let spec = kernel_spectrum(h.kernel(), dims.n_z(), dims.n_x())?;
    x.with_data(filter_frames(x.data(), dims.n_z(), dims.n_x(), &spec, false))
}

/// Adjoint of [`conv2_circ`]: frame-wise product with the conjugate kernel
/// spectrum, so that `<conv(x,h), y> = <x, conv2_adjoint(y,h)>`.
pub fn conv2_adjoint(y: &CasoratiMatrix, h: &PsfKernel) -> Result<CasoratiMatrix> {
    let dims = y.dims();
    let spec = kernel_spectrum(h.kernel(), dims.n_z(), dims.n_x())?;
    y.with_data(filter_frames(y.data(), dims.n_z(), dims.n_x(), &spec, true))
}
