//! Power Doppler rendering, contrast-ratio computation with a patch
//! sweep, and phantom ground-truth scoring.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fourier;
use crate::phantom::PhantomTruth;
use crate::seq::CasoratiMatrix;
use crate::solvers::DecompositionResult;

/// dB value assigned to pixels with zero temporal mean power.
pub const POWER_FLOOR_DB: f64 = -120.0;

/// Per-pixel temporal mean blood power in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDopplerImage {
    data: DMatrix<f64>,
    floor_db: f64,
}

impl PowerDopplerImage {
    /// Wraps precomputed dB data. `-inf` marks zero power; NaN and `+inf`
    /// are rejected.
    pub fn from_db(data: DMatrix<f64>, floor_db: f64) -> Result<Self> {
        if data.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Argument("dB image must be free of NaN/+inf".into()));
        }
        Ok(Self { data, floor_db })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn floor_db(&self) -> f64 {
        self.floor_db
    }

    pub fn n_z(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.data.ncols()
    }
}

/// `I_PD(z, x) = 10 log10( (1/N_t) sum_t |X(z,x,t)|^2 )`, with zero-power
/// pixels mapped to [`POWER_FLOOR_DB`].
pub fn power_doppler(x: &CasoratiMatrix) -> PowerDopplerImage {
    let dims = x.dims();
    let inv = 1.0 / dims.n_t() as f64;
    let px = dims.n_pixels();
    let mut power = vec![0.0f64; px];
    for t in 0..dims.n_t() {
        let col = &x.data().as_slice()[t * px..(t + 1) * px];
        for (p, v) in power.iter_mut().zip(col) {
            *p += v.norm_sqr();
        }
    }
    let data = DMatrix::from_fn(dims.n_z(), dims.n_x(), |z, xx| {
        let p = power[xx * dims.n_z() + z] * inv;
        if p > 0.0 {
            10.0 * p.log10()
        } else {
            POWER_FLOOR_DB
        }
    });
    PowerDopplerImage {
        data,
        floor_db: POWER_FLOOR_DB,
    }
}

/// Axis-aligned patch in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRect {
    pub z0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchRect {
    pub fn new(z0: usize, x0: usize, height: usize, width: usize) -> Self {
        Self {
            z0,
            x0,
            height,
            width,
        }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn in_bounds(&self, n_z: usize, n_x: usize) -> bool {
        self.area() >= 1 && self.z0 + self.height <= n_z && self.x0 + self.width <= n_x
    }

    pub fn overlaps(&self, other: &PatchRect) -> bool {
        self.z0 < other.z0 + other.height
            && other.z0 < self.z0 + self.height
            && self.x0 < other.x0 + other.width
            && other.x0 < self.x0 + self.width
    }
}

/// Mean linear amplitude (`10^(dB/20)`) over a patch.
fn patch_linear_mean(img: &PowerDopplerImage, r: &PatchRect) -> f64 {
    let mut acc = 0.0;
    for x in r.x0..r.x0 + r.width {
        for z in r.z0..r.z0 + r.height {
            acc += 10f64.powf(img.data[(z, x)] / 20.0);
        }
    }
    acc / r.area() as f64
}

/// `CR = 20 log10(mu_R2 / mu_R1)` with patch means taken on linear
/// amplitude.
pub fn contrast_ratio(img: &PowerDopplerImage, r1: &PatchRect, r2: &PatchRect) -> Result<f64> {
    for (name, r) in [("R1", r1), ("R2", r2)] {
        if !r.in_bounds(img.n_z(), img.n_x()) {
            return Err(Error::Argument(format!(
                "{name} {r:?} out of bounds for {}x{} image",
                img.n_z(),
                img.n_x()
            )));
        }
    }
    let mu1 = patch_linear_mean(img, r1);
    let mu2 = patch_linear_mean(img, r2);
    if mu1 == 0.0 {
        return Err(Error::UndefinedContrast);
    }
    Ok(20.0 * (mu2 / mu1).log10())
}

/// One placement of the swept patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSample {
    pub z0: usize,
    pub x0: usize,
    pub cr_db: f64,
}

/// CR for every stride-aligned placement of an `patch_h x patch_w` patch
/// R2 that does not overlap R1, in row-major placement order.
pub fn cr_sweep(
    img: &PowerDopplerImage,
    r1: &PatchRect,
    patch_h: usize,
    patch_w: usize,
    stride: usize,
) -> Result<Vec<SweepSample>> {
    if stride == 0 || patch_h == 0 || patch_w == 0 {
        return Err(Error::Argument("patch and stride must be >= 1".into()));
    }
    if !r1.in_bounds(img.n_z(), img.n_x()) {
        return Err(Error::Argument("R1 out of bounds".into()));
    }
    if patch_h > img.n_z() || patch_w > img.n_x() {
        return Err(Error::Argument("sweep patch larger than image".into()));
    }
    let mut samples = Vec::new();
    let mut z0 = 0;
    while z0 + patch_h <= img.n_z() {
        let mut x0 = 0;
        while x0 + patch_w <= img.n_x() {
            let r2 = PatchRect::new(z0, x0, patch_h, patch_w);
            if !r2.overlaps(r1) {
                samples.push(SweepSample {
                    z0,
                    x0,
                    cr_db: contrast_ratio(img, r1, &r2)?,
                });
            }
            x0 += stride;
        }
        z0 += stride;
    }
    if samples.is_empty() {
        return Err(Error::EmptySweep);
    }
    Ok(samples)
}

/// Sweep samples as `z0,x0,cr_db` CSV.
pub fn sweep_csv(samples: &[SweepSample]) -> String {
    let mut out = String::from("z0,x0,cr_db\n");
    for s in samples {
        let _ = writeln!(out, "{},{},{:.6}", s.z0, s.x0, s.cr_db);
    }
    out
}

/// Phantom scoring record.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    /// `||T_hat - T|| / ||T||`.
    pub tissue_rel_err: f64,
    /// `||H (*) X_hat - B|| / ||B||` (uses the estimated PSF when present).
    pub blood_rel_err: f64,
    /// Blood support precision at 1% of max |X|.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreRecord {
    pub fn to_kv_text(&self) -> String {
        format!(
            "tissue_rel_err = {:.12e}\nblood_rel_err = {:.12e}\nprecision = {:.6}\nrecall = {:.6}\nf1 = {:.6}\n",
            self.tissue_rel_err, self.blood_rel_err, self.precision, self.recall, self.f1
        )
    }
}

fn rel_err(diff: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        diff / reference
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn support_mask(m: &DMatrix<num_complex::Complex64>) -> Vec<bool> {
    let max = m.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let thresh = 0.01 * max;
    m.iter().map(|v| v.norm() > thresh && max > 0.0).collect()
}

/// Scores a decomposition against phantom ground truth: relative
/// Frobenius errors for tissue and reconvolved blood, and
/// precision/recall/F1 of the blood support at 1% of max |X|.
pub fn score_against_truth(
    result: &DecompositionResult,
    truth: &PhantomTruth,
) -> Result<ScoreRecord> {
    if result.blood_x.dims() != truth.blood_hi.dims()
        || result.tissue_t.dims() != truth.tissue.dims()
    {
        return Err(Error::Argument(
            "result and truth dims do not match".into(),
        ));
    }

    let tissue_rel_err = rel_err(
        (result.tissue_t.data() - truth.tissue.data()).norm(),
        truth.tissue.data().norm(),
    );

    let blood_est = match &result.psf {
        Some(psf) => fourier::conv2_circ(&result.blood_x, psf)?,
        None => result.blood_x.clone(),
    };
    let blood_true = fourier::conv2_circ(&truth.blood_hi, &truth.psf)?;
    let blood_rel_err = rel_err(
        (blood_est.data() - blood_true.data()).norm(),
        blood_true.data().norm(),
    );

    let pred = support_mask(result.blood_x.data());
    let actual = support_mask(truth.blood_hi.data());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &a) in pred.iter().zip(&actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let truth_empty = tp + fn_ == 0;
    let precision = if tp + fp == 0 {
        if truth_empty {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if truth_empty {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };

    Ok(ScoreRecord {
        tissue_rel_err,
        blood_rel_err,
        precision,
        recall,
        f1,
    })
}

/// Renders the dB image to an 8-bit binary PGM. `window` is an absolute
/// `(db_min, db_max)` range; `None` spans the top 40 dB below the image
/// maximum. The window is recorded in a comment line.
pub fn render_pgm(img: &PowerDopplerImage, window: Option<(f64, f64)>) -> Result<Vec<u8>> {
    let (db_min, db_max) = match window {
        Some((lo, hi)) => (lo, hi),
        None => {
            let peak = img.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // + 0.0 folds a -0.0 peak into 0.0 for display
            let peak = if peak.is_finite() { peak + 0.0 } else { 0.0 };
            (peak - 40.0, peak)
        }
    };
    if !(db_min < db_max) {
        return Err(Error::Argument(format!(
            "dB window needs min < max, got [{db_min}, {db_max}]"
        )));
    }
    let (h, w) = (img.n_z(), img.n_x());
    let mut out = Vec::with_capacity(64 + h * w);
    out.extend_from_slice(
        format!("P5\n# db window [{db_min:.6}, {db_max:.6}] dB\n{w} {h}\n255\n").as_bytes(),
    );
    let span = db_max - db_min;
    for z in 0..h {
        for x in 0..w {
            let v = img.data[(z, x)].clamp(db_min, db_max);
            let g = ((v - db_min) / span * 255.0).round() as u8;
            out.push(g);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::SequenceDims;
    use num_complex::Complex64;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn constant_sequence(value: Complex64, n_z: usize, n_x: usize, n_t: usize) -> CasoratiMatrix {
        let dims = SequenceDims::new(n_z, n_x, n_t).unwrap();
        CasoratiMatrix::from_fn(dims, |_, _, _| value)
    }

    #[test]
    fn unit_power_maps_to_zero_db() {
        let img = power_doppler(&constant_sequence(c(1.0, 0.0), 3, 4, 5));
        for v in img.data().iter() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn amplitude_ten_maps_to_twenty_db() {
        let img = power_doppler(&constant_sequence(c(10.0, 0.0), 2, 2, 3));
        for v in img.data().iter() {
            assert!((v - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn power_doppler_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(121);
        let dims = SequenceDims::new(3, 3, 5).unwrap();
        let x = CasoratiMatrix::from_fn(dims, |_, _, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let img = power_doppler(&x);
        for z in 0..3 {
            for xx in 0..3 {
                let mut p = 0.0;
                for t in 0..5 {
                    p += x.get(z, xx, t).norm_sqr();
                }
                let expect = 10.0 * (p / 5.0).log10();
                assert!((img.data()[(z, xx)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_power_hits_the_floor() {
        let img = power_doppler(&CasoratiMatrix::zeros(
            SequenceDims::new(2, 2, 2).unwrap(),
        ));
        for v in img.data().iter() {
            assert_eq!(*v, POWER_FLOOR_DB);
        }
    }

    #[test]
    fn power_doppler_is_frame_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(122);
        let dims = SequenceDims::new(3, 2, 4).unwrap();
        let x = CasoratiMatrix::from_fn(dims, |_, _, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let mut permuted = x.data().clone();
        permuted.swap_columns(0, 3);
        permuted.swap_columns(1, 2);
        let y = CasoratiMatrix::new(permuted, dims).unwrap();
        assert_eq!(power_doppler(&x).data(), power_doppler(&y).data());
    }

    #[test]
    fn scaling_shifts_db_and_leaves_cr_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let dims = SequenceDims::new(8, 8, 3).unwrap();
        let x = CasoratiMatrix::from_fn(dims, |_, _, _| {
            c(rng.random::<f64>() + 0.1, rng.random::<f64>() - 0.5)
        });
        let scaled = x.with_data(x.data() * c(3.5, 0.0)).unwrap();
        let a = power_doppler(&x);
        let b = power_doppler(&scaled);
        let shift = 20.0 * 3.5f64.log10();
        for (va, vb) in a.data().iter().zip(b.data().iter()) {
            assert!((vb - va - shift).abs() < 1e-9);
        }
        let r1 = PatchRect::new(0, 0, 3, 3);
        let r2 = PatchRect::new(4, 4, 3, 3);
        let cra = contrast_ratio(&a, &r1, &r2).unwrap();
        let crb = contrast_ratio(&b, &r1, &r2).unwrap();
        assert!((cra - crb).abs() < 1e-9);
    }

    #[test]
    fn identical_patches_have_zero_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(124);
        let data = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() * 30.0 - 50.0);
        let img = PowerDopplerImage::from_db(data, POWER_FLOOR_DB).unwrap();
        let r = PatchRect::new(1, 2, 3, 3);
        assert_eq!(contrast_ratio(&img, &r, &r).unwrap(), 0.0);
    }

    #[test]
    fn ten_to_one_amplitude_ratio_reads_twenty_db() {
        // R1 pixels at 0 dB (amplitude 1), R2 pixels at 20 dB (amplitude 10)
        let data = DMatrix::from_fn(4, 8, |_, x| if x < 4 { 0.0 } else { 20.0 });
        let img = PowerDopplerImage::from_db(data, POWER_FLOOR_DB).unwrap();
        let r1 = PatchRect::new(0, 0, 4, 4);
        let r2 = PatchRect::new(0, 4, 4, 4);
        let cr = contrast_ratio(&img, &r1, &r2).unwrap();
        assert!((cr - 20.0).abs() < 1e-12);
    }

    #[test]
    fn contrast_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(125);
        let data = DMatrix::from_fn(10, 10, |_, _| rng.random::<f64>() * 40.0 - 60.0);
        let img = PowerDopplerImage::from_db(data.clone(), POWER_FLOOR_DB).unwrap();
        let r1 = PatchRect::new(1, 1, 3, 4);
        let r2 = PatchRect::new(5, 4, 4, 3);
        let mean = |r: &PatchRect| {
            let mut acc = 0.0;
            for x in r.x0..r.x0 + r.width {
                for z in r.z0..r.z0 + r.height {
                    acc += 10f64.powf(data[(z, x)] / 20.0);
                }
            }
            acc / r.area() as f64
        };
        let expect = 20.0 * (mean(&r2) / mean(&r1)).log10();
        let got = contrast_ratio(&img, &r1, &r2).unwrap();
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn out_of_bounds_patch_is_rejected() {
        let img = PowerDopplerImage::from_db(DMatrix::zeros(4, 4), POWER_FLOOR_DB).unwrap();
        let r1 = PatchRect::new(0, 0, 2, 2);
        let r2 = PatchRect::new(3, 3, 2, 2);
        assert!(matches!(
            contrast_ratio(&img, &r1, &r2),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn zero_reference_amplitude_is_undefined() {
        let mut data = DMatrix::zeros(4, 4);
        for x in 0..2 {
            for z in 0..4 {
                data[(z, x)] = f64::NEG_INFINITY; // zero linear amplitude
            }
        }
        let img = PowerDopplerImage::from_db(data, POWER_FLOOR_DB).unwrap();
        let r1 = PatchRect::new(0, 0, 4, 2);
        let r2 = PatchRect::new(0, 2, 4, 2);
        assert!(matches!(
            contrast_ratio(&img, &r1, &r2),
            Err(Error::UndefinedContrast)
        ));
    }

    #[test]
    fn constant_image_sweep_is_identically_zero() {
        let img =
            PowerDopplerImage::from_db(DMatrix::from_element(8, 8, -17.0), POWER_FLOOR_DB)
                .unwrap();
        let r1 = PatchRect::new(0, 0, 2, 2);
        let samples = cr_sweep(&img, &r1, 2, 2, 2).unwrap();
        for s in &samples {
            assert!(s.cr_db.abs() < 1e-12);
        }
    }

    #[test]
    fn four_by_four_sweep_has_exactly_three_placements() {
        let img = PowerDopplerImage::from_db(DMatrix::zeros(4, 4), POWER_FLOOR_DB).unwrap();
        let r1 = PatchRect::new(0, 0, 2, 2);
        let samples = cr_sweep(&img, &r1, 2, 2, 2).unwrap();
        let placements: Vec<(usize, usize)> = samples.iter().map(|s| (s.z0, s.x0)).collect();
        assert_eq!(placements, vec![(0, 2), (2, 0), (2, 2)]);
    }

    #[test]
    fn sweep_with_no_valid_placement_is_an_error() {
        let img = PowerDopplerImage::from_db(DMatrix::zeros(4, 4), POWER_FLOOR_DB).unwrap();
        let r1 = PatchRect::new(0, 0, 4, 4); // covers everything
        assert!(matches!(
            cr_sweep(&img, &r1, 4, 4, 2),
            Err(Error::EmptySweep)
        ));
    }

    #[test]
    fn pgm_header_and_clamping() {
        let data = DMatrix::from_fn(2, 3, |z, x| -60.0 + 20.0 * (z * 3 + x) as f64);
        let img = PowerDopplerImage::from_db(data, POWER_FLOOR_DB).unwrap();
        let bytes = render_pgm(&img, Some((-40.0, 0.0))).unwrap();
        let text = String::from_utf8_lossy(&bytes[..bytes.len() - 6]);
        assert!(text.starts_with("P5\n"));
        assert!(text.contains("db window [-40.000000, 0.000000] dB"));
        assert!(text.contains("3 2"));
        let pixels = &bytes[bytes.len() - 6..];
        // values: -60 -40 -20 / 0 20 40 row-major => clamped mapping
        assert_eq!(pixels[0], 0); // -60 clamps to db_min
        assert_eq!(pixels[1], 0); // -40 at db_min
        assert_eq!(pixels[2], 128); // -20 mid window
        assert_eq!(pixels[3], 255); // 0 at db_max
        assert_eq!(pixels[4], 255); // clamped above
        assert_eq!(pixels[5], 255);
    }

    #[test]
    fn default_window_spans_forty_db_below_peak() {
        let data = DMatrix::from_fn(2, 2, |z, x| -10.0 * (z * 2 + x) as f64);
        let img = PowerDopplerImage::from_db(data, POWER_FLOOR_DB).unwrap();
        let bytes = render_pgm(&img, None).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("db window [-40.000000, 0.000000] dB"));
    }
}
