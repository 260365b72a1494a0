//! Solver hyperparameters plus the flat `key = value` config-file format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::psf::DEFAULT_PSF_SUPPORT;

/// Per-method hyperparameters. A single struct covers all four solvers;
/// each method reads the fields it needs and validates them on entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Sparsity weight (lambda).
    pub lambda: f64,
    /// Nuclear-norm weight (rho), baseline BD-RPCA only.
    pub rho: f64,
    /// Augmented-Lagrangian penalty (mu).
    pub mu: f64,
    /// Fixed tissue rank for the fast solver; `None` selects it from the
    /// data spectrum.
    pub r_f: Option<usize>,
    /// SVD filter tissue threshold.
    pub t_c: Option<usize>,
    /// SVD filter blood threshold.
    pub t_b: Option<usize>,
    /// GoDec rank.
    pub r_g: Option<usize>,
    /// GoDec hard threshold.
    pub tau_g: f64,
    /// Relative stopping tolerance (scaled by ||S||_F).
    pub epsilon: f64,
    /// Outer-iteration cap.
    pub max_outer: usize,
    /// Inner ADMM iteration cap.
    pub max_inner: usize,
    /// Estimated PSF support (K_z, K_x).
    pub psf_support: (usize, usize),
    /// Homomorphic log-spectrum smoothing sigma, in frequency bins.
    pub psf_sigma: f64,
    /// Seed for every random draw a solver makes.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            rho: 1.0,
            mu: 1.0,
            r_f: None,
            t_c: None,
            t_b: None,
            r_g: None,
            tau_g: 0.0,
            epsilon: 1e-6,
            max_outer: 50,
            max_inner: 200,
            psf_support: DEFAULT_PSF_SUPPORT,
            psf_sigma: 3.0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// Common-field sanity checks shared by every solver.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("rho", self.rho),
            ("tau_g", self.tau_g),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Argument(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.mu > 0.0) {
            return Err(Error::Argument(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Argument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.psf_sigma > 0.0) {
            return Err(Error::Argument(format!(
                "psf_sigma must be > 0, got {}",
                self.psf_sigma
            )));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Argument("iteration caps must be >= 1".into()));
        }
        if self.psf_support.0 == 0 || self.psf_support.1 == 0 {
            return Err(Error::Argument("psf support must be >= 1 per axis".into()));
        }
        if let (Some(t_c), Some(t_b)) = (self.t_c, self.t_b) {
            if t_c >= t_b {
                return Err(Error::Argument(format!(
                    "svd thresholds require t_c < t_b, got {t_c} >= {t_b}"
                )));
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values. Blank
    /// lines and `#` comments are skipped; unknown keys are errors.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
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
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("invalid number {v:?} for {key}")))
            };
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| bad(format!("invalid integer {v:?} for {key}")))
            };
            let parse_opt = |v: &str| -> Result<Option<usize>> {
                if v.eq_ignore_ascii_case("auto") || v.eq_ignore_ascii_case("none") {
                    Ok(None)
                } else {
                    Ok(Some(parse_usize(v)?))
                }
            };
            match key {
                "lambda" => self.lambda = parse_f64(value)?,
                "rho" => self.rho = parse_f64(value)?,
                "mu" => self.mu = parse_f64(value)?,
                "r_f" => self.r_f = parse_opt(value)?,
                "t_c" => self.t_c = parse_opt(value)?,
                "t_b" => self.t_b = parse_opt(value)?,
                "r_g" => self.r_g = parse_opt(value)?,
                "tau_g" => self.tau_g = parse_f64(value)?,
                "epsilon" => self.epsilon = parse_f64(value)?,
                "max_outer" => self.max_outer = parse_usize(value)?,
                "max_inner" => self.max_inner = parse_usize(value)?,
                "psf_support_z" => self.psf_support.0 = parse_usize(value)?,
                "psf_support_x" => self.psf_support.1 = parse_usize(value)?,
                "psf_sigma" => self.psf_sigma = parse_f64(value)?,
                "seed" => {
                    self.seed = value
                        .parse::<u64>()
                        .map_err(|_| bad(format!("invalid seed {value:?}")))?
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_kv_text(&std::fs::read_to_string(path)?)
    }

    /// Serializes every field back to the flat text format.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<usize>| v.map_or_else(|| "auto".to_string(), |x| x.to_string());
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "rho = {}", self.rho);
        let _ = writeln!(out, "mu = {}", self.mu);
        let _ = writeln!(out, "r_f = {}", opt(self.r_f));
        let _ = writeln!(out, "t_c = {}", opt(self.t_c));
        let _ = writeln!(out, "t_b = {}", opt(self.t_b));
        let _ = writeln!(out, "r_g = {}", opt(self.r_g));
        let _ = writeln!(out, "tau_g = {}", self.tau_g);
        let _ = writeln!(out, "epsilon = {}", self.epsilon);
        let _ = writeln!(out, "max_outer = {}", self.max_outer);
        let _ = writeln!(out, "max_inner = {}", self.max_inner);
        let _ = writeln!(out, "psf_support_z = {}", self.psf_support.0);
        let _ = writeln!(out, "psf_support_x = {}", self.psf_support.1);
        let _ = writeln!(out, "psf_sigma = {}", self.psf_sigma);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }
}
