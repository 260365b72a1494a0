//! Casorati-matrix data model for beamformed IQ sequences.
//!
//! A sequence of `N_t` complex frames of size `N_z x N_x` is stored as the
//! Casorati matrix: rows index space, columns index time. Frames are
//! flattened column-major with depth (z) fastest, so row `x * N_z + z` of
//! column `t` holds cube element `(z, x, t)` and reshaping a column back to
//! a frame is a plain reinterpretation of the same buffer.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Spatial and temporal extents of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceDims {
    n_z: usize,
    n_x: usize,
    n_t: usize,
}

impl SequenceDims {
    pub fn new(n_z: usize, n_x: usize, n_t: usize) -> Result<Self> {
        if n_z == 0 || n_x == 0 || n_t == 0 {
            return Err(Error::Dimension(format!(
                "all dims must be >= 1, got {n_z}x{n_x}x{n_t}"
            )));
        }
        n_z.checked_mul(n_x)
            .and_then(|px| px.checked_mul(n_t))
            .ok_or(Error::DimOverflow)?;
        Ok(Self { n_z, n_x, n_t })
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    /// Pixels per frame (`N_z * N_x`), the Casorati row count.
    pub fn n_pixels(&self) -> usize {
        self.n_z * self.n_x
    }

    /// Total complex samples in the sequence.
    pub fn n_total(&self) -> usize {
        self.n_pixels() * self.n_t
    }
}

/// One complex frame, `N_z` rows by `N_x` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame2D {
    data: DMatrix<Complex64>,
}

impl Frame2D {
    pub fn new(data: DMatrix<Complex64>) -> Self {
        Self { data }
    }

    pub fn zeros(n_z: usize, n_x: usize) -> Self {
        Self {
            data: DMatrix::zeros(n_z, n_x),
        }
    }

    pub fn data(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<Complex64> {
        self.data
    }

    pub fn n_z(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.data.ncols()
    }

    pub fn get(&self, z: usize, x: usize) -> Complex64 {
        self.data[(z, x)]
    }
}

/// Complex Casorati matrix of a sequence; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CasoratiMatrix {
    data: DMatrix<Complex64>,
    dims: SequenceDims,
}

impl CasoratiMatrix {
    pub fn new(data: DMatrix<Complex64>, dims: SequenceDims) -> Result<Self> {
        if data.nrows() != dims.n_pixels() || data.ncols() != dims.n_t() {
            return Err(Error::Dimension(format!(
                "matrix {}x{} does not match dims {}x{}x{} (expected {}x{})",
                data.nrows(),
                data.ncols(),
                dims.n_z(),
                dims.n_x(),
                dims.n_t(),
                dims.n_pixels(),
                dims.n_t()
            )));
        }
        Ok(Self { data, dims })
    }

    pub fn zeros(dims: SequenceDims) -> Self {
        Self {
            data: DMatrix::zeros(dims.n_pixels(), dims.n_t()),
            dims,
        }
    }

    /// Builds a sequence by evaluating `f(z, x, t)` at every sample.
    pub fn from_fn<F>(dims: SequenceDims, mut f: F) -> Self
    where
        F: FnMut(usize, usize, usize) -> Complex64,
    {
        let n_z = dims.n_z();
        let data = DMatrix::from_fn(dims.n_pixels(), dims.n_t(), |row, t| {
            f(row % n_z, row / n_z, t)
        });
        Self { data, dims }
    }

    /// Wraps a matrix that shares this sequence's dims.
    pub fn with_data(&self, data: DMatrix<Complex64>) -> Result<Self> {
        Self::new(data, self.dims)
    }

    pub fn dims(&self) -> SequenceDims {
        self.dims
    }

    pub fn data(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<Complex64> {
        self.data
    }

    /// Row of the Casorati matrix holding pixel `(z, x)`.
    pub fn row_index(&self, z: usize, x: usize) -> usize {
        x * self.dims.n_z() + z
    }

    pub fn get(&self, z: usize, x: usize, t: usize) -> Complex64 {
        self.data[(self.row_index(z, x), t)]
    }

    /// Copies frame `t` out as an `N_z x N_x` matrix.
    pub fn frame(&self, t: usize) -> Frame2D {
        let n_z = self.dims.n_z();
        let n_x = self.dims.n_x();
        let px = self.dims.n_pixels();
        let col = &self.data.as_slice()[t * px..(t + 1) * px];
        Frame2D::new(DMatrix::from_column_slice(n_z, n_x, col))
    }
}

/// Dense 3D complex cube stored z-fastest, then x, then t (the same sample
/// order as the Casorati matrix buffer and the on-disk format).
#[derive(Debug, Clone, PartialEq)]
pub struct Cube3 {
    data: Vec<Complex64>,
    dims: SequenceDims,
}

impl Cube3 {
    pub fn new(data: Vec<Complex64>, dims: SequenceDims) -> Result<Self> {
        if data.len() != dims.n_total() {
            return Err(Error::Dimension(format!(
                "cube buffer holds {} samples, dims {}x{}x{} require {}",
                data.len(),
                dims.n_z(),
                dims.n_x(),
                dims.n_t(),
                dims.n_total()
            )));
        }
        Ok(Self { data, dims })
    }

    /// Builds a cube from nested `cube[z][x][t]` vectors, rejecting ragged
    /// input.
    pub fn from_nested(cube: &[Vec<Vec<Complex64>>]) -> Result<Self> {
        let n_z = cube.len();
        let n_x = cube.first().map(|plane| plane.len()).unwrap_or(0);
        let n_t = cube
            .first()
            .and_then(|plane| plane.first())
            .map(|row| row.len())
            .unwrap_or(0);
        let dims = SequenceDims::new(n_z, n_x, n_t)?;
        for plane in cube {
            if plane.len() != n_x {
                return Err(Error::Dimension("ragged cube: uneven x extent".into()));
            }
            for row in plane {
                if row.len() != n_t {
                    return Err(Error::Dimension("ragged cube: uneven t extent".into()));
                }
            }
        }
        let mut data = vec![Complex64::default(); dims.n_total()];
        for (z, plane) in cube.iter().enumerate() {
            for (x, row) in plane.iter().enumerate() {
                for (t, &v) in row.iter().enumerate() {
                    data[t * dims.n_pixels() + x * n_z + z] = v;
                }
            }
        }
        Ok(Self { data, dims })
    }

    pub fn from_fn<F>(dims: SequenceDims, mut f: F) -> Self
    where
        F: FnMut(usize, usize, usize) -> Complex64,
    {
        let n_z = dims.n_z();
        let px = dims.n_pixels();
        let mut data = vec![Complex64::default(); dims.n_total()];
        for t in 0..dims.n_t() {
            for x in 0..dims.n_x() {
                for z in 0..n_z {
                    data[t * px + x * n_z + z] = f(z, x, t);
                }
            }
        }
        Self { data, dims }
    }

    pub fn dims(&self) -> SequenceDims {
        self.dims
    }

    pub fn get(&self, z: usize, x: usize, t: usize) -> Complex64 {
        self.data[t * self.dims.n_pixels() + x * self.dims.n_z() + z]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
}

/// Stacks cube frames into Casorati columns (z-fastest flattening).
pub fn to_casorati(cube: &Cube3) -> CasoratiMatrix {
    let dims = cube.dims();
    let data = DMatrix::from_column_slice(dims.n_pixels(), dims.n_t(), &cube.data);
    CasoratiMatrix { data, dims }
}

/// Exact inverse of [`to_casorati`].
pub fn to_cube(m: &CasoratiMatrix) -> Cube3 {
    Cube3 {
        data: m.data.as_slice().to_vec(),
        dims: m.dims,
    }
}

/// Mean along the time dimension: output pixel `(z, x)` is the complex
/// average of `cube(z, x, t)` over all frames.
pub fn temporal_average(m: &CasoratiMatrix) -> Frame2D {
    Frame2D::new(mean_frame(&m.data, m.dims.n_z(), m.dims.n_x()))
}

/// Column mean of a raw Casorati buffer, reshaped to a frame.
pub(crate) fn mean_frame(
    data: &DMatrix<Complex64>,
    n_z: usize,
    n_x: usize,
) -> DMatrix<Complex64> {
    let px = n_z * n_x;
    let n_t = data.ncols();
    let inv = 1.0 / n_t as f64;
    let mut acc = DMatrix::<Complex64>::zeros(n_z, n_x);
    for t in 0..n_t {
        let col = &data.as_slice()[t * px..(t + 1) * px];
        for (a, &v) in acc.as_mut_slice().iter_mut().zip(col) {
            *a += v;
        }
    }
    acc.apply(|a| *a *= inv);
    acc
}
