//! Fourier-domain preconditioner `M = F⁻¹·D·F` built from a ramp filter
//! tapered by a generalized Hamming window,
//!
//! ```text
//! h(ω) = (|ω| + μ)·(ρ + (1 - ρ)·cos ω)
//! ```
//!
//! lifted radially to the 2-D DFT grid and clamped from below so that `D`
//! stays positive. The symmetric square root `N = F⁻¹·D^{1/2}·F` satisfies
//! `NᵀN = M` with `Nᵀ = N`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Relative size of the imaginary part tolerated before it is discarded.
const IMAG_RESIDUE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PreconditionerSpec {
    pub mu: f64,
    pub rho: f64,
    /// Smallest filter value allowed after clamping.
    pub floor: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl PreconditionerSpec {
    pub const DEFAULT_FLOOR: f64 = 1e-8;

    pub fn new(mu: f64, rho: f64, grid_rows: usize, grid_cols: usize) -> Result<Self> {
        let spec = PreconditionerSpec {
            mu,
            rho,
            floor: Self::DEFAULT_FLOOR,
            grid_rows,
            grid_cols,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param("mu", format!("must be positive, got {}", self.mu)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::param("rho", format!("must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.floor > 0.0) {
            return Err(Error::param("floor", "must be positive"));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::param("grid", "grid has zero extent"));
        }
        Ok(())
    }
}

/// `max(floor, (|ω| + μ)·(ρ + (1 - ρ)·cos ω))` for `ω ∈ [0, π]`.
pub fn filter_value(omega: f64, spec: &PreconditionerSpec) -> Result<f64> {
    if !(0.0..=PI).contains(&omega) {
        return Err(Error::param("omega", format!("{omega} lies outside [0, π]")));
    }
    let raw = (omega.abs() + spec.mu) * (spec.rho + (1.0 - spec.rho) * omega.cos());
    Ok(raw.max(spec.floor))
}

/// Signed DFT index in `(-n/2, n/2]`.
fn wrap(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radial frequency of DFT bin `(kr, kc)`: `min(π, hypot(ω_r, ω_c))` with
/// `ω = 2π·wrap(k)/n` along each axis.
pub fn radial_frequency(kr: usize, kc: usize, rows: usize, cols: usize) -> f64 {
    let wr = 2.0 * PI * wrap(kr, rows) / rows as f64;
    let wc = 2.0 * PI * wrap(kc, cols) / cols as f64;
    wr.hypot(wc).min(PI)
}

/// Any operator applied to the CG gradient.
pub trait Preconditioner: Sync {
    fn apply(&self, g: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, g: &[f64]) -> Vec<f64> {
        g.to_vec()
    }
}

/// A real, even-symmetric diagonal filter applied in the 2-D DFT domain.
#[derive(Clone)]
pub struct FourierPreconditioner {
    rows: usize,
    cols: usize,
    filter: Vec<f64>,
    sqrt_filter: Vec<f64>,
    inv_sqrt_filter: Vec<f64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierPreconditioner")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish_non_exhaustive()
    }
}

impl FourierPreconditioner {
    pub fn new(spec: &PreconditionerSpec) -> Result<Self> {
        spec.validate()?;
        let (rows, cols) = (spec.grid_rows, spec.grid_cols);
        let mut filter = Vec::with_capacity(rows * cols);
        for kr in 0..rows {
            for kc in 0..cols {
                filter.push(filter_value(radial_frequency(kr, kc, rows, cols), spec)?);
            }
        }
        Self::from_filter(rows, cols, filter)
    }

    /// Uses an explicit frequency response `D` (row-major over DFT bins). The
    /// filter must be positive and even (`D[k] = D[-k]`) so results are real.
    pub fn from_filter(rows: usize, cols: usize, filter: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param("grid", "grid has zero extent"));
        }
        if filter.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "filter",
                expected: rows * cols,
                found: filter.len(),
            });
        }
        if let Some(v) = filter.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::param("filter", format!("values must be positive, found {v}")));
        }
        let mut planner = FftPlanner::new();
        Ok(FourierPreconditioner {
            rows,
            cols,
            sqrt_filter: filter.iter().map(|v| v.sqrt()).collect(),
            inv_sqrt_filter: filter.iter().map(|v| 1.0 / v.sqrt()).collect(),
            filter,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        })
    }

    /// `D = I`, so `M`, `N` and `N⁻ᵀ` are all the identity.
    pub fn identity(rows: usize, cols: usize) -> Result<Self> {
        Self::from_filter(rows, cols, vec![1.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Frequency response `D`, row-major over DFT bins.
    pub fn filter(&self) -> &[f64] {
        &self.filter
    }

    /// `Mx`.
    pub fn apply_m(&self, x: &[f64]) -> Vec<f64> {
        self.filtered(x, &self.filter)
    }

    /// `Nx` with `N = F⁻¹·D^{1/2}·F`. Since `N` is symmetric this is also `Nᵀx`.
    pub fn apply_n(&self, x: &[f64]) -> Vec<f64> {
        self.filtered(x, &self.sqrt_filter)
    }

    /// `N⁻ᵀx = N⁻¹x`.
    pub fn apply_n_inv_t(&self, x: &[f64]) -> Vec<f64> {
        self.filtered(x, &self.inv_sqrt_filter)
    }

    fn filtered(&self, x: &[f64], weights: &[f64]) -> Vec<f64> {
        let (rows, cols) = (self.rows, self.cols);
        assert!(
            x.len() == rows * cols,
            "preconditioner on a {rows}x{cols} grid applied to a vector of length {}",
            x.len()
        );
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, true);
        for (b, w) in buf.iter_mut().zip(weights) {
            *b *= w;
        }
        self.transform(&mut buf, false);
        let scale = 1.0 / (rows * cols) as f64;
        let max_re = buf.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
        let max_im = buf.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
        assert!(
            max_im <= IMAG_RESIDUE_TOL * max_re.max(f64::MIN_POSITIVE),
            "filtered image has imaginary residue {max_im:e} against real part {max_re:e}"
        );
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// Unnormalized 2-D DFT (rows, then columns) in place.
    fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let (rows, cols) = (self.rows, self.cols);
        let (row_fft, col_fft) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row_fft.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = buf[r * cols + c];
            }
            col_fft.process(&mut column);
            for r in 0..rows {
                buf[r * cols + c] = column[r];
            }
        }
    }
}

impl Preconditioner for FourierPreconditioner {
    fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.apply_m(g)
    }
}
