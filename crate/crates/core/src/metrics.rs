//! Data-fidelity objectives and the selective error figure of merit.

use crate::error::{Error, Result};
use crate::geometry::ScanGeometry;
use crate::linops::{matvec, norm_sq, rmatvec, Image, SparseMatrix};
use crate::solvers::ArtParams;

/// Pixels whose centres lie inside a grid-centred ellipse.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipseMask {
    pub semi_axis_h: f64,
    pub semi_axis_v: f64,
    members: Vec<usize>,
    rows: usize,
    cols: usize,
}

impl EllipseMask {
    /// Horizontal semi-axis of the default region of interest, cm.
    pub const DEFAULT_SEMI_AXIS_H: f64 = 5.0;
    /// Vertical semi-axis of the default region of interest, cm.
    pub const DEFAULT_SEMI_AXIS_V: f64 = 7.0;

    pub fn new(geom: &ScanGeometry, semi_axis_h: f64, semi_axis_v: f64) -> Result<Self> {
        if !(semi_axis_h > 0.0 && semi_axis_v > 0.0) {
            return Err(Error::param("mask", "semi-axes must be positive"));
        }
        let (rows, cols) = (geom.grid_rows, geom.grid_cols);
        let members = (0..rows * cols)
            .filter(|&k| {
                let (x, y) = geom.pixel_center(k / cols, k % cols);
                (x / semi_axis_h).powi(2) + (y / semi_axis_v).powi(2) <= 1.0
            })
            .collect();
        Ok(EllipseMask {
            semi_axis_h,
            semi_axis_v,
            members,
            rows,
            cols,
        })
    }

    /// The 5 cm × 7 cm region of interest.
    pub fn standard(geom: &ScanGeometry) -> Self {
        Self::new(geom, Self::DEFAULT_SEMI_AXIS_H, Self::DEFAULT_SEMI_AXIS_V)
            .expect("positive semi-axes")
    }

    /// Row-major pixel indices in the mask, ascending.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members.binary_search(&idx).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// `f(x) = ‖Rx − b‖²`.
pub fn residual_f(x: &[f64], r: &SparseMatrix, b: &[f64]) -> Result<f64> {
    check_dims(x, r, b)?;
    let rx = matvec(r, x);
    Ok(rx.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
}

/// The half-scaled objective `½‖Rx − b‖²`.
pub fn half_residual(x: &[f64], r: &SparseMatrix, b: &[f64]) -> Result<f64> {
    Ok(0.5 * residual_f(x, r, b)?)
}

/// `r²‖Rx − b‖² + ‖x − μ_X‖²`.
pub fn bayesian_objective(
    x: &Image,
    r: &SparseMatrix,
    b: &[f64],
    params: &ArtParams,
) -> Result<f64> {
    check_dims(x.data(), r, b)?;
    let prior = prior_distance_sq(x, params)?;
    Ok(params.snr * params.snr * residual_f(x.data(), r, b)? + prior)
}

/// Gradient `2r²Rᵀ(Rx − b) + 2(x − μ_X)` of [`bayesian_objective`].
pub fn bayesian_gradient(
    x: &Image,
    r: &SparseMatrix,
    b: &[f64],
    params: &ArtParams,
) -> Result<Vec<f64>> {
    check_dims(x.data(), r, b)?;
    if !x.same_shape(&params.prior) {
        return Err(Error::DimensionMismatch {
            what: "prior image",
            expected: x.len(),
            found: params.prior.len(),
        });
    }
    let res: Vec<f64> = matvec(r, x.data()).iter().zip(b).map(|(p, q)| p - q).collect();
    let back = rmatvec(r, &res);
    let w = 2.0 * params.snr * params.snr;
    Ok(back
        .iter()
        .zip(x.data())
        .zip(params.prior.data())
        .map(|((g, xi), mi)| w * g + 2.0 * (xi - mi))
        .collect())
}

fn prior_distance_sq(x: &Image, params: &ArtParams) -> Result<f64> {
    if !x.same_shape(&params.prior) {
        return Err(Error::DimensionMismatch {
            what: "prior image",
            expected: x.len(),
            found: params.prior.len(),
        });
    }
    Ok(norm_sq(&crate::linops::sub(x.data(), params.prior.data())))
}

fn check_dims(x: &[f64], r: &SparseMatrix, b: &[f64]) -> Result<()> {
    if x.len() != r.n_cols() {
        return Err(Error::DimensionMismatch {
            what: "image",
            expected: r.n_cols(),
            found: x.len(),
        });
    }
    if b.len() != r.n_rows() {
        return Err(Error::DimensionMismatch {
            what: "data",
            expected: r.n_rows(),
            found: b.len(),
        });
    }
    Ok(())
}

/// Normalization constant `C = 1/‖x†|_S‖₂` for [`selective_error`].
pub fn selective_error_constant(phantom: &Image, mask: &EllipseMask) -> Result<f64> {
    let energy: f64 = mask.members().iter().map(|&k| phantom.data()[k].powi(2)).sum();
    if energy == 0.0 {
        return Err(Error::ZeroPhantomOnMask);
    }
    Ok(1.0 / energy.sqrt())
}

/// `C·sqrt(Σ_{(i,j)∈S} (x − x†)²)` with `C` from [`selective_error_constant`],
/// i.e. the relative RMS error inside the mask.
pub fn selective_error(x: &Image, phantom: &Image, mask: &EllipseMask) -> Result<f64> {
    let c = selective_error_constant(phantom, mask)?;
    selective_error_with_constant(x, phantom, mask, c)
}

/// [`selective_error`] with a caller-chosen constant `C`.
pub fn selective_error_with_constant(
    x: &Image,
    phantom: &Image,
    mask: &EllipseMask,
    c: f64,
) -> Result<f64> {
    if !x.same_shape(phantom) {
        return Err(Error::DimensionMismatch {
            what: "reconstruction",
            expected: phantom.len(),
            found: x.len(),
        });
    }
    if phantom.rows() != mask.rows || phantom.cols() != mask.cols {
        return Err(Error::DimensionMismatch {
            what: "mask grid",
            expected: mask.rows * mask.cols,
            found: phantom.len(),
        });
    }
    let sum: f64 = mask
        .members()
        .iter()
        .map(|&k| (x.data()[k] - phantom.data()[k]).powi(2))
        .sum();
    Ok(c * sum.sqrt())
}
