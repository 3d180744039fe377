//! Total variation and the nonascending-step generator used for
//! superiorization.
//!
//! For an `l × c` image,
//!
//! ```text
//! TV(y) = Σ_{i<l-1} Σ_{j<c-1} sqrt((y[i,j] - y[i+1,j])² + (y[i,j] - y[i,j+1])²)
//! ```
//!
//! [`s_tv`] takes `K` nonascending steps from `x`, each one shrinking its
//! trial length `γ·aˡ` until TV does not increase, and returns the total
//! displacement together with the advanced counter `ℓ`.

use crate::error::{Error, Result};
use crate::linops::{norm, Image};

/// Inner repeat guard; the loop provably terminates in exact arithmetic.
pub const MAX_INNER_TRIALS: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuperiorizationParams {
    /// Nonascending steps per outer iteration.
    pub k: usize,
    /// Step-length diminishing factor, in (0, 1).
    pub a: f64,
    /// Starting step length.
    pub gamma: f64,
}

impl SuperiorizationParams {
    pub fn new(k: usize, a: f64, gamma: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("K", "must be at least 1"));
        }
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::param("a", format!("must lie in (0, 1), got {a}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
        }
        Ok(SuperiorizationParams { k, a, gamma })
    }

    /// Upper bound on `‖s‖` for a call starting at counter `ell`: `K·γ·a^ell`.
    pub fn step_bound(&self, ell: u64) -> f64 {
        self.k as f64 * self.gamma * self.a.powf(ell as f64)
    }
}

/// The step-length counter `ℓ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct SuperiorizationState {
    pub ell: u64,
}

/// Output of one [`s_tv`] call.
#[derive(Clone, Debug)]
pub struct TvStep {
    /// Displacement `y - x`.
    pub s: Vec<f64>,
    pub state: SuperiorizationState,
    /// Trial lengths `γ·a^ℓ` that were accepted, one per outer loop.
    pub accepted_lengths: Vec<f64>,
}

#[inline]
fn term(y: &[f64], cols: usize, i: usize, j: usize) -> f64 {
    let v = y[i * cols + j];
    let dv = v - y[(i + 1) * cols + j];
    let dh = v - y[i * cols + j + 1];
    (dv * dv + dh * dh).sqrt()
}

fn tv_raw(y: &[f64], rows: usize, cols: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..rows.saturating_sub(1) {
        for j in 0..cols.saturating_sub(1) {
            total += term(y, cols, i, j);
        }
    }
    total
}

pub fn tv_value(y: &Image) -> f64 {
    tv_raw(y.data(), y.rows(), y.cols())
}

/// Negative TV gradient `t̄`, with zero in every component whose partial
/// derivative is undefined (some square root touching it has argument 0).
pub fn negative_tv_gradient(y: &Image) -> Vec<f64> {
    let (rows, cols) = (y.rows(), y.cols());
    let d = y.data();
    let mut out = vec![0.0; d.len()];
    if rows < 2 || cols < 2 {
        return out;
    }
    // sqrt terms are evaluated once; a zero term poisons every pixel it touches
    let mut terms = vec![0.0; (rows - 1) * (cols - 1)];
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            terms[i * (cols - 1) + j] = term(d, cols, i, j);
        }
    }
    let t = |i: usize, j: usize| terms[i * (cols - 1) + j];
    for i in 0..rows {
        for j in 0..cols {
            let v = d[i * cols + j];
            let mut partial = 0.0;
            let mut defined = true;
            // own term: y[i,j] appears as the centre pixel
            if i + 1 < rows && j + 1 < cols {
                let tij = t(i, j);
                if tij > 0.0 {
                    partial += (2.0 * v - d[(i + 1) * cols + j] - d[i * cols + j + 1]) / tij;
                } else {
                    defined = false;
                }
            }
            // as the lower neighbour of (i-1, j)
            if i >= 1 && j + 1 < cols {
                let tu = t(i - 1, j);
                if tu > 0.0 {
                    partial += (v - d[(i - 1) * cols + j]) / tu;
                } else {
                    defined = false;
                }
            }
            // as the right neighbour of (i, j-1)
            if j >= 1 && i + 1 < rows {
                let tl = t(i, j - 1);
                if tl > 0.0 {
                    partial += (v - d[i * cols + j - 1]) / tl;
                } else {
                    defined = false;
                }
            }
            if defined {
                out[i * cols + j] = -partial;
            }
        }
    }
    out
}

/// Normalized negative gradient: `t̄/‖t̄‖`, or the zero vector when `t̄ = 0`.
/// The result never has norm above one.
pub fn nonascending_vector(y: &Image) -> Vec<f64> {
    let mut t = negative_tv_gradient(y);
    let n = norm(&t);
    if n == 0.0 {
        return t;
    }
    // a few ulps of headroom keep ‖γ·t‖ <= γ after rounding
    let scale = (1.0 - 4.0 * f64::EPSILON) / n;
    t.iter_mut().for_each(|v| *v *= scale);
    while norm(&t) > 1.0 {
        t.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
    }
    t
}

/// Runs the nonascending-step procedure from `x` with counter `state`.
///
/// For each of the `K` outer loops a direction `t` is computed at the current
/// point `y = x + s`, then trial points `y + γ·aˡ·t` are generated (incrementing `ℓ`
/// after each) until one has TV no larger than `TV(y)`; that point becomes the
/// new `y`. The displacement `y - x` and the advanced counter are returned.
pub fn s_tv(
    x: &Image,
    state: SuperiorizationState,
    params: &SuperiorizationParams,
) -> Result<TvStep> {
    let (rows, cols) = (x.rows(), x.cols());
    let x = x.data();
    let mut ell = state.ell;
    // s is accumulated directly and every TV test is made at x + s, the
    // exact point a caller will form, so TV(x + s) <= TV(x) holds bitwise
    let mut s = vec![0.0; x.len()];
    let mut y = x.to_vec();
    let mut s_trial = vec![0.0; x.len()];
    let mut y_trial = vec![0.0; x.len()];
    let mut accepted_lengths = Vec::with_capacity(params.k);
    for _ in 0..params.k {
        let t = nonascending_vector(&Image::new(rows, cols, y.clone())?);
        let tv_y = tv_raw(&y, rows, cols);
        let mut trials = 0u64;
        loop {
            let step = params.gamma * params.a.powf(ell as f64);
            for i in 0..x.len() {
                s_trial[i] = s[i] + step * t[i];
                y_trial[i] = x[i] + s_trial[i];
            }
            ell += 1;
            trials += 1;
            if tv_raw(&y_trial, rows, cols) <= tv_y {
                accepted_lengths.push(step);
                break;
            }
            if trials >= MAX_INNER_TRIALS {
                return Err(Error::TrialCapExceeded(MAX_INNER_TRIALS));
            }
        }
        std::mem::swap(&mut s, &mut s_trial);
        std::mem::swap(&mut y, &mut y_trial);
    }
    Ok(TvStep {
        s,
        state: SuperiorizationState { ell },
        accepted_lengths,
    })
}
