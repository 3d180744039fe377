//! Parallel-beam scan geometry, the pixel-basis projection matrix, ellipse
//! phantoms and noisy data simulation.
//!
//! Coordinates are in centimetres with the origin at the grid centre, `x`
//! pointing right (increasing column) and `y` pointing up (decreasing row).
//! The ray with angle `θ` and signed offset `t` is the line
//! `{p : p·(cos θ, sin θ) = t}`, so angle-0 rays are vertical and cross a
//! single pixel column.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linops::{matvec, Image, SparseMatrix};

/// Direction cosines below this magnitude are snapped to zero so that rays at
/// `π/2` are exactly grid aligned.
const AXIS_SNAP: f64 = 1e-14;
/// Relative distance (in pixels) within which a ray counts as lying on a grid line.
const LINE_SNAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    pub n_angles: usize,
    pub n_rays: usize,
    /// Detector spacing between neighbouring rays, cm.
    pub ray_spacing: f64,
    /// Side length of a square pixel, cm.
    pub pixel_size: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl ScanGeometry {
    pub fn new(
        n_angles: usize,
        n_rays: usize,
        ray_spacing: f64,
        pixel_size: f64,
        grid_rows: usize,
        grid_cols: usize,
    ) -> Result<Self> {
        let g = ScanGeometry {
            n_angles,
            n_rays,
            ray_spacing,
            pixel_size,
            grid_rows,
            grid_cols,
        };
        g.validate()?;
        Ok(g)
    }

    /// 64×64 pixels, 90 angles, 95 rays. Pixel size and ray spacing are the
    /// 243-pixel / 0.0752 cm protocol rescaled to 64 pixels, so the field of
    /// view stays at 18.27 cm.
    pub fn desk_scale() -> Self {
        let spacing = 0.0752 * 243.0 / 64.0;
        ScanGeometry {
            n_angles: 90,
            n_rays: 95,
            ray_spacing: spacing,
            pixel_size: spacing,
            grid_rows: 64,
            grid_cols: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::param("grid", "grid has zero extent"));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::param("pixel_size", "grid has zero extent"));
        }
        if self.n_angles == 0 {
            return Err(Error::param("n_angles", "must be positive"));
        }
        if self.n_rays == 0 {
            return Err(Error::param("n_rays", "must be positive"));
        }
        if !(self.ray_spacing > 0.0 && self.ray_spacing.is_finite()) {
            return Err(Error::param("ray_spacing", "must be positive"));
        }
        Ok(())
    }

    /// Number of measurements, the row count of the projection matrix.
    pub fn n_measurements(&self) -> usize {
        self.n_angles * self.n_rays
    }

    pub fn n_pixels(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn angle(&self, a: usize) -> f64 {
        PI * a as f64 / self.n_angles as f64
    }

    /// Signed distance of ray `r` from the grid centre.
    pub fn ray_offset(&self, r: usize) -> f64 {
        (r as f64 - (self.n_rays as f64 - 1.0) / 2.0) * self.ray_spacing
    }

    /// Centre of pixel `(i, j)` (0-based row, column) in cm.
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        let s = self.pixel_size;
        let x = (j as f64 + 0.5 - self.grid_cols as f64 / 2.0) * s;
        let y = (self.grid_rows as f64 / 2.0 - i as f64 - 0.5) * s;
        (x, y)
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_size * self.pixel_size
    }

    pub fn half_width(&self) -> f64 {
        self.grid_cols as f64 * self.pixel_size / 2.0
    }

    pub fn half_height(&self) -> f64 {
        self.grid_rows as f64 * self.pixel_size / 2.0
    }

    /// Length of the grid diagonal, an upper bound on any ray's total weight.
    pub fn diagonal(&self) -> f64 {
        (2.0 * self.half_width()).hypot(2.0 * self.half_height())
    }
}

/// Measured line integrals, indexed `angle_index * n_rays + ray_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub data: Vec<f64>,
    pub geometry: ScanGeometry,
}

impl Sinogram {
    pub fn new(geometry: ScanGeometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.n_measurements() {
            return Err(Error::DimensionMismatch {
                what: "sinogram",
                expected: geometry.n_measurements(),
                found: data.len(),
            });
        }
        Ok(Sinogram { data, geometry })
    }

    pub fn at(&self, angle: usize, ray: usize) -> f64 {
        self.data[angle * self.geometry.n_rays + ray]
    }
}

/// Intersection lengths of one ray with the pixel grid, as `(pixel index,
/// length)` pairs in traversal order.
///
/// An axis-parallel ray running exactly along a grid line is split evenly
/// between the pixels on either side of it, so projections respect the
/// grid's mirror and quarter-turn symmetries.
pub fn trace_ray(geom: &ScanGeometry, theta: f64, offset: f64) -> Vec<(usize, f64)> {
    let (mut c, mut s) = (theta.cos(), theta.sin());
    if c.abs() < AXIS_SNAP {
        c = 0.0;
    }
    if s.abs() < AXIS_SNAP {
        s = 0.0;
    }
    // the normal is (c, s); for an axis-parallel ray only one is non-zero
    let along_line = if s == 0.0 {
        Some((offset * c + geom.half_width(), c, geom.grid_cols))
    } else if c == 0.0 {
        Some((offset * s + geom.half_height(), s, geom.grid_rows))
    } else {
        None
    };
    if let Some((dist, sign, n)) = along_line {
        let u = dist / geom.pixel_size;
        let k = u.round();
        if (u - k).abs() <= LINE_SNAP && k >= 0.0 && k <= n as f64 {
            let mut out = Vec::new();
            for centre in [k - 0.5, k + 0.5] {
                if centre > 0.0 && centre < n as f64 {
                    let shifted = (centre * geom.pixel_size - dist) * sign + offset;
                    out.extend(trace_interior(geom, c, s, shifted).into_iter().map(|(i, w)| (i, 0.5 * w)));
                }
            }
            return out;
        }
    }
    trace_interior(geom, c, s, offset)
}

fn trace_interior(geom: &ScanGeometry, c: f64, s: f64, offset: f64) -> Vec<(usize, f64)> {
    // point on the ray closest to the origin, and unit direction
    let (px, py) = (offset * c, offset * s);
    let (dx, dy) = (-s, c);

    let (xmin, xmax) = (-geom.half_width(), geom.half_width());
    let (ymin, ymax) = (-geom.half_height(), geom.half_height());

    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (p, d, min, max) in [(px, dx, xmin, xmax), (py, dy, ymin, ymax)] {
        if d == 0.0 {
            if p <= min || p >= max {
                return Vec::new();
            }
        } else {
            let (a0, a1) = ((min - p) / d, (max - p) / d);
            lo = lo.max(a0.min(a1));
            hi = hi.min(a0.max(a1));
        }
    }
    if !(hi > lo) {
        return Vec::new();
    }

    let step = geom.pixel_size;
    let mut alphas = vec![lo, hi];
    for (p, d, min, n) in [(px, dx, xmin, geom.grid_cols), (py, dy, ymin, geom.grid_rows)] {
        if d == 0.0 {
            continue;
        }
        for k in 1..n {
            let a = (min + k as f64 * step - p) / d;
            if a > lo && a < hi {
                alphas.push(a);
            }
        }
    }
    alphas.sort_unstable_by(f64::total_cmp);

    let mut out = Vec::with_capacity(alphas.len());
    for w in alphas.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let (x, y) = (px + mid * dx, py + mid * dy);
        let j = (((x - xmin) / step).floor().max(0.0) as usize).min(geom.grid_cols - 1);
        let i = (((ymax - y) / step).floor().max(0.0) as usize).min(geom.grid_rows - 1);
        out.push((i * geom.grid_cols + j, len));
    }
    out
}

/// Projection matrix with exact ray/pixel intersection lengths (cm). Row
/// `a * n_rays + r` holds ray `r` at angle `a`; rays missing the grid give
/// empty rows.
pub fn build_projection_matrix(geom: &ScanGeometry) -> Result<SparseMatrix> {
    geom.validate()?;
    let rows: Vec<Vec<(usize, f64)>> = (0..geom.n_measurements())
        .into_par_iter()
        .map(|row| {
            let (a, r) = (row / geom.n_rays, row % geom.n_rays);
            trace_ray(geom, geom.angle(a), geom.ray_offset(r))
        })
        .collect();
    SparseMatrix::from_rows(geom.n_pixels(), rows)
}

/// One additive ellipse of a phantom. `semi_axis_a` lies along the ellipse's
/// own x axis, which is rotated by `rotation` radians counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseSpec {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_axis_a: f64,
    pub semi_axis_b: f64,
    pub rotation: f64,
    /// Attenuation added inside the ellipse, cm⁻¹.
    pub delta_value: f64,
}

impl EllipseSpec {
    pub fn new(
        center_x: f64,
        center_y: f64,
        semi_axis_a: f64,
        semi_axis_b: f64,
        rotation: f64,
        delta_value: f64,
    ) -> Result<Self> {
        if !(semi_axis_a > 0.0) {
            return Err(Error::param("semi_axis_a", "must be positive"));
        }
        if !(semi_axis_b > 0.0) {
            return Err(Error::param("semi_axis_b", "must be positive"));
        }
        Ok(EllipseSpec {
            center_x,
            center_y,
            semi_axis_a,
            semi_axis_b,
            rotation,
            delta_value,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center_x, y - self.center_y);
        let (s, c) = self.rotation.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_axis_a).powi(2) + (v / self.semi_axis_b).powi(2) <= 1.0
    }
}

/// Rasterizes ellipses onto the scan grid: each pixel receives the sum of
/// `delta_value` over the ellipses containing its centre.
pub fn generate_phantom(ellipses: &[EllipseSpec], geom: &ScanGeometry) -> Image {
    let mut img = Image::zeros(geom.grid_rows, geom.grid_cols);
    let cols = geom.grid_cols;
    for (idx, v) in img.data_mut().iter_mut().enumerate() {
        let (x, y) = geom.pixel_center(idx / cols, idx % cols);
        *v = ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.delta_value)
            .sum();
    }
    img
}

/// A head-like test object: a 0.416 cm⁻¹ skull ring around 0.21 cm⁻¹ brain
/// with low-contrast inserts inside the 0.204..0.21675 display window. The
/// skull's inner boundary sits just outside the 5 cm × 7 cm error mask.
pub fn head_phantom() -> Vec<EllipseSpec> {
    #[rustfmt::skip]
    let rows: [[f64; 6]; 10] = [
        [ 0.0,  0.0, 6.0, 8.0,  0.0,   0.416],
        [ 0.0,  0.0, 5.5, 7.5,  0.0,  -0.206],
        [-1.2,  1.5, 0.8, 2.0,  0.3,  -0.004],
        [ 1.2,  1.5, 0.8, 2.0, -0.3,  -0.004],
        [ 0.0, -3.5, 1.5, 1.0,  0.0,   0.005],
        [-2.5, -1.2, 0.7, 0.7,  0.0,   0.006],
        [ 2.5, -1.2, 0.5, 0.5,  0.0,   0.004],
        [ 0.0,  4.6, 1.1, 0.7,  0.5,   0.005],
        [-1.0, -5.6, 0.4, 0.4,  0.0,   0.006],
        [ 1.0, -5.6, 0.4, 0.4,  0.0,  -0.005],
    ];
    rows.iter()
        .map(|r| EllipseSpec::new(r[0], r[1], r[2], r[3], r[4], r[5]).expect("valid built-in"))
        .collect()
}

/// Parses a phantom description: one ellipse per line as six numbers
/// `center_x center_y a b rotation delta`; `#` starts a comment.
pub fn parse_phantom_spec(text: &str) -> Result<Vec<EllipseSpec>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = n + 1;
        let nums = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {lineno}: `{tok}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if nums.len() != 6 {
            return Err(Error::Format(format!(
                "line {lineno}: expected 6 numbers, found {}",
                nums.len()
            )));
        }
        let e = EllipseSpec::new(nums[0], nums[1], nums[2], nums[3], nums[4], nums[5])
            .map_err(|e| Error::Format(format!("line {lineno}: {e}")))?;
        out.push(e);
    }
    Ok(out)
}

/// Simulated measurements `b` for `phantom`.
///
/// Without `mean_photons` the exact line integrals `R·phantom` are returned.
/// Otherwise each ray draws a photon count from
/// `Poisson(mean_photons · exp(-[R·phantom]_i))` using a ChaCha8 stream seeded
/// with `seed`, clamps it to at least one, and reports
/// `-ln(count / mean_photons)`.
pub fn simulate_data(
    r: &SparseMatrix,
    phantom: &Image,
    mean_photons: Option<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    if phantom.len() != r.n_cols() {
        return Err(Error::DimensionMismatch {
            what: "phantom",
            expected: r.n_cols(),
            found: phantom.len(),
        });
    }
    let exact = matvec(r, phantom.data());
    let Some(n0) = mean_photons else {
        return Ok(exact);
    };
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::param("mean_photons", format!("must be positive, got {n0}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    exact
        .iter()
        .map(|&integral| {
            let expected = n0 * (-integral).exp();
            let count = if expected > 0.0 && expected.is_finite() {
                Poisson::new(expected)
                    .map_err(|e| Error::param("mean_photons", e.to_string()))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            Ok(-(count.max(1.0) / n0).ln())
        })
        .collect()
}
