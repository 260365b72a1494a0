//! Separation of ultrafast ultrasound Doppler sequences into low-rank
//! tissue, sparse high-resolution blood flow and noise.
//!
//! The crate provides the Casorati data model with bit-exact "UFD1" file
//! I/O, complex SVD machinery (full, truncated Lanczos, singular value
//! thresholding, rank selection), frame-wise circulant convolution, blind
//! PSF estimation, four decomposition solvers (SVD threshold filter,
//! GoDec, BD-RPCA and its fast fixed-rank variant), Power Doppler metrics
//! and a synthetic phantom generator for end-to-end verification.

pub mod config;
pub mod error;
pub mod fourier;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod phantom;
pub mod psf;
pub mod seq;
pub mod solvers;

pub use error::{Error, Result};
