//! Synthetic Casorati sequences with known tissue, blood, PSF and noise,
//! so every solver claim can be checked against ground truth at desk
//! scale.
//!
//! Tissue is an exact rank-`r_true` factor product: orthonormalized
//! smooth spatial maps times orthonormalized low-pass temporal profiles,
//! with geometric singular values scaled to unit per-entry RMS. Blood is
//! a set of point scatterers drifting along wrap-around vessel paths,
//! phase-rotating frame to frame to mimic the Doppler shift. The acquired
//! sequence is `S = T + H (*) X + N`.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fourier;
use crate::io;
use crate::psf::PsfKernel;
use crate::seq::{CasoratiMatrix, SequenceDims};

/// Doppler phase advance per pixel of scatterer travel, in cycles.
const DOPPLER_CYCLES_PER_PX: f64 = 0.05;

/// Scatterer spacing along the vessel path, in pixels. Separation must
/// clear the PSF main lobe or the sparse recovery problem stops being
/// identifiable and no solver can score well against the truth.
const SCATTERER_SPACING_PX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsfKind {
    /// Isotropic Gaussian, sigma taken from `psf_sigma_z`.
    Gaussian,
    /// Axis-aligned Gaussian with separate depth/lateral sigmas.
    AnisotropicGaussian,
}

impl FromStr for PsfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "anisotropic-gaussian" => Ok(Self::AnisotropicGaussian),
            other => Err(Error::Argument(format!("unknown psf kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for PsfKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::AnisotropicGaussian => "anisotropic-gaussian",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub dims: SequenceDims,
    /// Exact tissue rank; 0 disables the tissue component.
    pub r_true: usize,
    /// Temporal smoothness of tissue factors as a fraction of Nyquist.
    pub tissue_drift: f64,
    pub vessel_count: usize,
    pub vessel_width_px: f64,
    pub flow_speed_px_per_frame: f64,
    /// Scatterer amplitude over tissue RMS; clinical regime is << 1.
    pub blood_amplitude_ratio: f64,
    pub psf_kind: PsfKind,
    pub psf_sigma_z: f64,
    pub psf_sigma_x: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: SequenceDims::new(64, 64, 200).expect("static dims"),
            r_true: 5,
            tissue_drift: 0.15,
            vessel_count: 3,
            vessel_width_px: 2.0,
            flow_speed_px_per_frame: 0.5,
            blood_amplitude_ratio: 0.05,
            psf_kind: PsfKind::AnisotropicGaussian,
            psf_sigma_z: 2.0,
            psf_sigma_x: 3.0,
            noise_sigma: 1e-3,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let min_spatial = self.dims.n_z().min(self.dims.n_x());
        if self.r_true >= self.dims.n_pixels().min(self.dims.n_t()) {
            return Err(Error::Argument(format!(
                "r_true {} must stay below min(N_z*N_x, N_t) = {}",
                self.r_true,
                self.dims.n_pixels().min(self.dims.n_t())
            )));
        }
        if !(0.0..1.0).contains(&self.tissue_drift) {
            return Err(Error::Argument("tissue_drift must lie in [0, 1)".into()));
        }
        if self.vessel_count > 0 {
            if !(self.vessel_width_px > 0.0)
                || self.vessel_width_px >= (min_spatial as f64) / 2.0
            {
                return Err(Error::Argument(format!(
                    "vessel width {} infeasible for {}x{} frames",
                    self.vessel_width_px,
                    self.dims.n_z(),
                    self.dims.n_x()
                )));
            }
            let band = self.dims.n_z() as f64 / self.vessel_count as f64;
            if band < 6.0 + self.vessel_width_px {
                return Err(Error::Argument(format!(
                    "{} vessels do not fit {} depth samples without crossing",
                    self.vessel_count,
                    self.dims.n_z()
                )));
            }
            if !self.flow_speed_px_per_frame.is_finite() {
                return Err(Error::Argument("flow speed must be finite".into()));
            }
        }
        if !(self.blood_amplitude_ratio >= 0.0) {
            return Err(Error::Argument("blood amplitude ratio must be >= 0".into()));
        }
        if !(self.psf_sigma_z > 0.0) || !(self.psf_sigma_x > 0.0) {
            return Err(Error::Argument("psf sigmas must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Argument("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "dims = {}x{}x{}",
            self.dims.n_z(),
            self.dims.n_x(),
            self.dims.n_t()
        );
        let _ = writeln!(out, "r_true = {}", self.r_true);
        let _ = writeln!(out, "tissue_drift = {}", self.tissue_drift);
        let _ = writeln!(out, "vessel_count = {}", self.vessel_count);
        let _ = writeln!(out, "vessel_width_px = {}", self.vessel_width_px);
        let _ = writeln!(
            out,
            "flow_speed_px_per_frame = {}",
            self.flow_speed_px_per_frame
        );
        let _ = writeln!(out, "blood_amplitude_ratio = {}", self.blood_amplitude_ratio);
        let _ = writeln!(out, "psf_kind = {}", self.psf_kind);
        let _ = writeln!(out, "psf_sigma_z = {}", self.psf_sigma_z);
        let _ = writeln!(out, "psf_sigma_x = {}", self.psf_sigma_x);
        let _ = writeln!(out, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: lineno,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |msg: String| Error::Config { line: lineno, msg };
            match key {
                "dims" => cfg.dims = parse_dims(value).map_err(|e| bad(e.to_string()))?,
                "r_true" => {
                    cfg.r_true = value.parse().map_err(|_| bad(format!("bad r_true {value:?}")))?
                }
                "tissue_drift" => {
                    cfg.tissue_drift =
                        value.parse().map_err(|_| bad(format!("bad drift {value:?}")))?
                }
                "vessel_count" => {
                    cfg.vessel_count =
                        value.parse().map_err(|_| bad(format!("bad count {value:?}")))?
                }
                "vessel_width_px" => {
                    cfg.vessel_width_px =
                        value.parse().map_err(|_| bad(format!("bad width {value:?}")))?
                }
                "flow_speed_px_per_frame" => {
                    cfg.flow_speed_px_per_frame =
                        value.parse().map_err(|_| bad(format!("bad speed {value:?}")))?
                }
                "blood_amplitude_ratio" => {
                    cfg.blood_amplitude_ratio =
                        value.parse().map_err(|_| bad(format!("bad ratio {value:?}")))?
                }
                "psf_kind" => cfg.psf_kind = value.parse()?,
                "psf_sigma_z" => {
                    cfg.psf_sigma_z =
                        value.parse().map_err(|_| bad(format!("bad sigma {value:?}")))?
                }
                "psf_sigma_x" => {
                    cfg.psf_sigma_x =
                        value.parse().map_err(|_| bad(format!("bad sigma {value:?}")))?
                }
                "noise_sigma" => {
                    cfg.noise_sigma =
                        value.parse().map_err(|_| bad(format!("bad sigma {value:?}")))?
                }
                "seed" => {
                    cfg.seed = value.parse().map_err(|_| bad(format!("bad seed {value:?}")))?
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }
}

/// Parses `ZxXxT` dimension triples.
pub fn parse_dims(text: &str) -> Result<SequenceDims> {
    let parts: Vec<&str> = text.split(['x', 'X']).collect();
    if parts.len() != 3 {
        return Err(Error::Argument(format!(
            "dims must look like 64x64x200, got {text:?}"
        )));
    }
    let mut v = [0usize; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("bad dimension {p:?}")))?;
    }
    SequenceDims::new(v[0], v[1], v[2])
}

/// Ground truth backing a generated sequence.
#[derive(Debug, Clone)]
pub struct PhantomTruth {
    pub tissue: CasoratiMatrix,
    pub blood_hi: CasoratiMatrix,
    pub psf: PsfKernel,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn complex_gaussian(rng: &mut ChaCha8Rng, std: f64) -> Complex64 {
    let n = StandardNormal;
    let s = std / 2f64.sqrt();
    Complex64::new(
        s * <StandardNormal as Distribution<f64>>::sample(&n, rng),
        s * <StandardNormal as Distribution<f64>>::sample(&n, rng),
    )
}

/// Smooth complex random field: white noise low-passed by a periodic
/// Gaussian in the frequency plane.
fn smooth_field(rng: &mut ChaCha8Rng, n_z: usize, n_x: usize) -> DMatrix<Complex64> {
    let white = DMatrix::from_fn(n_z, n_x, |_, _| complex_gaussian(rng, 1.0));
    let mut spec = fourier::fft2_mat(&white);
    let sigma_fz = 0.06 * n_z as f64;
    let sigma_fx = 0.06 * n_x as f64;
    for x in 0..n_x {
        for z in 0..n_z {
            let dz = z.min(n_z - z) as f64;
            let dx = x.min(n_x - x) as f64;
            let g = (-0.5 * ((dz / sigma_fz).powi(2) + (dx / sigma_fx).powi(2))).exp();
            spec[(z, x)] *= g;
        }
    }
    fourier::ifft2_mat(&spec)
}

/// Low-pass periodic temporal profile built from a filtered random walk.
fn smooth_profile(rng: &mut ChaCha8Rng, n_t: usize, drift: f64) -> DVector<Complex64> {
    let mut walk = DVector::from_element(n_t, Complex64::default());
    let mut acc = Complex64::default();
    for t in 0..n_t {
        acc += complex_gaussian(rng, 1.0);
        walk[t] = acc;
    }
    // keep bins within drift * Nyquist on both spectrum ends
    let cutoff = ((drift * n_t as f64 / 2.0).round() as usize).max(1);
    let mut buf: Vec<Complex64> = walk.as_slice().to_vec();
    fourier::fft2_frames_inplace(&mut buf, n_t, 1, true);
    for (k, v) in buf.iter_mut().enumerate() {
        if k.min(n_t - k) > cutoff {
            *v = Complex64::default();
        }
    }
    fourier::fft2_frames_inplace(&mut buf, n_t, 1, false);
    DVector::from_vec(buf)
}

/// Modified Gram-Schmidt; panics only if a column is linearly dependent,
/// which the random construction avoids almost surely.
fn orthonormalize(cols: Vec<DVector<Complex64>>) -> Result<Vec<DVector<Complex64>>> {
    let mut basis: Vec<DVector<Complex64>> = Vec::with_capacity(cols.len());
    for mut v in cols {
        for q in &basis {
            let d = q.dotc(&v);
            v.axpy(-d, q, Complex64::new(1.0, 0.0));
        }
        let n = v.norm();
        if n < 1e-12 {
            return Err(Error::Numeric(
                "degenerate phantom factor; choose another seed".into(),
            ));
        }
        v /= Complex64::new(n, 0.0);
        basis.push(v);
    }
    Ok(basis)
}

fn gaussian_kernel(s_z: f64, s_x: f64, n_z: usize, n_x: usize) -> Result<PsfKernel> {
    let half_z = (4.0 * s_z).ceil() as usize;
    let half_x = (4.0 * s_x).ceil() as usize;
    let k_z = (2 * half_z + 1).min(if n_z % 2 == 0 { n_z - 1 } else { n_z }).max(1);
    let k_x = (2 * half_x + 1).min(if n_x % 2 == 0 { n_x - 1 } else { n_x }).max(1);
    let (c_z, c_x) = (k_z / 2, k_x / 2);
    let mut k = DMatrix::from_fn(k_z, k_x, |i, j| {
        let dz = i as f64 - c_z as f64;
        let dx = j as f64 - c_x as f64;
        Complex64::new(
            (-0.5 * ((dz / s_z).powi(2) + (dx / s_x).powi(2))).exp(),
            0.0,
        )
    });
    let n = k.norm();
    k /= Complex64::new(n, 0.0);
    PsfKernel::from_kernel(k, n_z, n_x)
}

struct Scatterer {
    /// Position along the vessel in arc-length units.
    arc: f64,
    transverse: f64,
    phase: f64,
}

struct Vessel {
    z0: f64,
    x0: f64,
    wraps_z: f64,
    wiggle_amp: f64,
    wiggle_freq: f64,
    wiggle_phase: f64,
    /// Cumulative arc length sampled on a fine u-grid, for equal-spacing
    /// placement and constant-speed motion.
    arc_table: Vec<f64>,
    scatterers: Vec<Scatterer>,
}

impl Vessel {
    fn position(&self, u: f64, n_z: usize, n_x: usize) -> (f64, f64) {
        let z = self.z0
            + self.wraps_z * n_z as f64 * u
            + self.wiggle_amp * (TAU * self.wiggle_freq * u + self.wiggle_phase).sin();
        let x = self.x0 + n_x as f64 * u;
        (z, x)
    }

    fn total_arc(&self) -> f64 {
        *self.arc_table.last().expect("nonempty arc table")
    }

    /// Maps an arc-length offset (wrapping) back to the path parameter.
    fn u_at_arc(&self, s: f64) -> f64 {
        let total = self.total_arc();
        let s = s.rem_euclid(total);
        let idx = self.arc_table.partition_point(|&a| a <= s);
        let hi = idx.min(self.arc_table.len() - 1);
        if hi == 0 {
            return 0.0;
        }
        let lo = hi - 1;
        let seg = self.arc_table[hi] - self.arc_table[lo];
        let frac = if seg > 0.0 {
            (s - self.arc_table[lo]) / seg
        } else {
            0.0
        };
        (lo as f64 + frac) / (self.arc_table.len() - 1) as f64
    }
}

/// Generates `S = T + H (*) X + N` together with its ground truth;
/// deterministic in the config seed.
pub fn generate(cfg: &PhantomConfig) -> Result<(CasoratiMatrix, PhantomTruth)> {
    cfg.validate()?;
    let dims = cfg.dims;
    let (n_z, n_x, n_t) = (dims.n_z(), dims.n_x(), dims.n_t());
    let px = dims.n_pixels();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // tissue: exact-rank factor product with geometric singular values
    let tissue = if cfg.r_true > 0 {
        let spatial: Vec<DVector<Complex64>> = (0..cfg.r_true)
            .map(|_| {
                let f = smooth_field(&mut rng, n_z, n_x);
                DVector::from_column_slice(f.as_slice())
            })
            .collect();
        let spatial = orthonormalize(spatial)?;
        let temporal: Vec<DVector<Complex64>> = (0..cfg.r_true)
            .map(|_| smooth_profile(&mut rng, n_t, cfg.tissue_drift))
            .collect();
        let temporal = orthonormalize(temporal)?;
        let decay: f64 = 0.8;
        let energy: f64 = (0..cfg.r_true).map(|i| decay.powi(2 * i as i32)).sum();
        let lead = (px as f64 * n_t as f64).sqrt() / energy.sqrt();
        let mut t = DMatrix::<Complex64>::zeros(px, n_t);
        for i in 0..cfg.r_true {
            let sigma = lead * decay.powi(i as i32);
            let scaled = &spatial[i] * Complex64::new(sigma, 0.0);
            t += scaled * temporal[i].adjoint();
        }
        t
    } else {
        DMatrix::zeros(px, n_t)
    };

    // blood: scatterers on wrap-around vessel paths
    let mut blood = DMatrix::<Complex64>::zeros(px, n_t);
    // one lateral vessel per depth band; bands keep vessels from
    // crossing, which would put scatterers below the PSF resolution
    let band = n_z as f64 / cfg.vessel_count.max(1) as f64;
    let vessels: Vec<Vessel> = (0..cfg.vessel_count)
        .map(|i| {
            let mut v = Vessel {
                z0: (i as f64 + 0.35 + 0.3 * rng.random::<f64>()) * band,
                x0: rng.random::<f64>() * n_x as f64,
                wraps_z: 0.0,
                wiggle_amp: 1.0 + rng.random::<f64>(),
                wiggle_freq: rng.random_range(1..=2) as f64,
                wiggle_phase: rng.random::<f64>() * TAU,
                arc_table: Vec::new(),
                scatterers: Vec::new(),
            };
            // tabulate cumulative arc length on a fine parameter grid
            let samples = (8 * (n_z + n_x)).max(64);
            let mut arc = Vec::with_capacity(samples + 1);
            arc.push(0.0);
            let mut prev = v.position(0.0, n_z, n_x);
            for i in 1..=samples {
                let u = i as f64 / samples as f64;
                let p = v.position(u, n_z, n_x);
                let d = ((p.0 - prev.0).powi(2) + (p.1 - prev.1).powi(2)).sqrt();
                arc.push(arc[i - 1] + d);
                prev = p;
            }
            v.arc_table = arc;
            // equal arc-length spacing with a small jitter: clumped
            // scatterers would sit below the PSF resolution limit and
            // make the sparse recovery problem unidentifiable
            let count = ((v.total_arc() / SCATTERER_SPACING_PX).round() as usize).max(1);
            let step = v.total_arc() / count as f64;
            v.scatterers = (0..count)
                .map(|p| Scatterer {
                    arc: (p as f64 + 0.2 * (rng.random::<f64>() - 0.5)) * step,
                    transverse: (rng.random::<f64>() - 0.5) * cfg.vessel_width_px,
                    phase: rng.random::<f64>() * TAU,
                })
                .collect();
            v
        })
        .collect();

    let amp = cfg.blood_amplitude_ratio;
    let f_d = DOPPLER_CYCLES_PER_PX * cfg.flow_speed_px_per_frame;
    let mut occupied = vec![false; px];
    for t in 0..n_t {
        occupied.fill(false);
        for v in &vessels {
            let ds = cfg.flow_speed_px_per_frame * t as f64;
            for s in &v.scatterers {
                let u = v.u_at_arc(s.arc + ds);
                let (z0, x0) = v.position(u, n_z, n_x);
                let z = z0 + s.transverse;
                let x = x0;
                let mut zi = (z.round() as isize).rem_euclid(n_z as isize) as usize;
                let xi = (x.round() as isize).rem_euclid(n_x as isize) as usize;
                // one reflector per pixel: step down in depth past any
                // collision so the per-frame support size stays constant
                for _ in 0..n_z {
                    if !occupied[xi * n_z + zi] {
                        break;
                    }
                    zi = (zi + 1) % n_z;
                }
                occupied[xi * n_z + zi] = true;
                let phase = TAU * f_d * t as f64 + s.phase;
                blood[(xi * n_z + zi, t)] += Complex64::from_polar(amp, phase);
            }
        }
    }

    let (sig_z, sig_x) = match cfg.psf_kind {
        PsfKind::Gaussian => (cfg.psf_sigma_z, cfg.psf_sigma_z),
        PsfKind::AnisotropicGaussian => (cfg.psf_sigma_z, cfg.psf_sigma_x),
    };
    let psf = gaussian_kernel(sig_z, sig_x, n_z, n_x)?;

    let tissue = CasoratiMatrix::new(tissue, dims)?;
    let blood_hi = CasoratiMatrix::new(blood, dims)?;
    let blurred = fourier::conv2_circ(&blood_hi, &psf)?;
    let mut s = tissue.data() + blurred.data();
    if cfg.noise_sigma > 0.0 {
        for v in s.iter_mut() {
            *v += complex_gaussian(&mut rng, cfg.noise_sigma);
        }
    }

    let truth = PhantomTruth {
        tissue,
        blood_hi,
        psf,
        noise_sigma: cfg.noise_sigma,
        seed: cfg.seed,
    };
    Ok((CasoratiMatrix::new(s, dims)?, truth))
}

/// Writes the sequence, the truth components and the config sidecar into
/// a directory: `s.ufd`, `tissue.ufd`, `blood.ufd`, `psf.ufd`,
/// `config.txt`.
pub fn save_phantom<P: AsRef<Path>>(
    dir: P,
    s: &CasoratiMatrix,
    truth: &PhantomTruth,
    cfg: &PhantomConfig,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    io::save_sequence(dir.join("s.ufd"), s)?;
    io::save_sequence(dir.join("tissue.ufd"), &truth.tissue)?;
    io::save_sequence(dir.join("blood.ufd"), &truth.blood_hi)?;
    io::save_sequence(dir.join("psf.ufd"), &truth.psf.to_sequence())?;
    std::fs::write(dir.join("config.txt"), cfg.to_kv_text())?;
    Ok(())
}

/// Reloads ground truth written by [`save_phantom`].
pub fn load_truth<P: AsRef<Path>>(dir: P) -> Result<PhantomTruth> {
    let dir = dir.as_ref();
    let tissue = io::load_sequence(dir.join("tissue.ufd"))?;
    let blood_hi = io::load_sequence(dir.join("blood.ufd"))?;
    let psf_seq = io::load_sequence(dir.join("psf.ufd"))?;
    let cfg = PhantomConfig::from_kv_text(&std::fs::read_to_string(dir.join("config.txt"))?)?;
    let psf = PsfKernel::from_sequence(&psf_seq, tissue.dims().n_z(), tissue.dims().n_x())?;
    Ok(PhantomTruth {
        tissue,
        blood_hi,
        psf,
        noise_sigma: cfg.noise_sigma,
        seed: cfg.seed,
    })
}
