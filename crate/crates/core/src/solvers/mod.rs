//! Reconstruction algorithms: CG, PCG and their superiorized versions
//! (including the transformed-PCG form used to relate them), and ART with
//! its superiorized version.
//!
//! Every driver follows the same outer loop. Iteration `k` first tests the
//! half-step iterate `x_{k-1/2}` against `eps` and stops if it is small
//! enough; otherwise it perturbs `x_k` into `x_{k+1/2}` (superiorized variants
//! only) and applies one unperturbed update to obtain `x_{k+1}`. The result is
//! `(k, x_{k-1/2})`, and the trace holds one record per test, so its length
//! is the returned `k`.

mod art;
mod cg;

use std::time::{Duration, Instant};

pub use art::{art, art_sweep, prior_gray_value, sup_art, uniform_prior, ArtParams, ArtState};
pub use cg::{
    cg, initialize, pcg, sup_cg, sup_pcg, sup_tpcg, u_cg, u_pcg, u_tpcg, Breakdown, DenseSystem,
    InitSnapshot, PcgState, ProjectionSystem, QuadraticSystem, TransformedSystem,
    BREAKDOWN_THRESHOLD,
};

use crate::error::Result;
use crate::geometry::ScanGeometry;
use crate::linops::Image;
use crate::metrics::{selective_error_with_constant, selective_error_constant, EllipseMask};
use crate::tv::tv_value;

/// Default cap on outer iterations.
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    /// The while test found the objective at or below `eps`.
    Converged,
    /// `max_iter` tests ran without meeting `eps`.
    MaxIterations,
    /// `pᵀh` vanished; the last iterate is returned.
    Breakdown,
}

impl RunStatus {
    /// Process exit code used by the command-line harness.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged => 0,
            RunStatus::MaxIterations => 3,
            RunStatus::Breakdown => 4,
        }
    }
}

/// Ground truth for monitoring reconstructions.
#[derive(Clone, Debug)]
pub struct Monitor {
    pub phantom: Image,
    pub mask: EllipseMask,
    pub se_constant: f64,
}

impl Monitor {
    pub fn new(phantom: Image, geom: &ScanGeometry) -> Result<Self> {
        let mask = EllipseMask::standard(geom);
        let se_constant = selective_error_constant(&phantom, &mask)?;
        Ok(Monitor {
            phantom,
            mask,
            se_constant,
        })
    }

    pub fn selective_error(&self, x: &Image) -> f64 {
        selective_error_with_constant(x, &self.phantom, &self.mask, self.se_constant)
            .expect("monitor and reconstruction share a grid")
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions<'a> {
    /// Termination threshold for the while test; must be positive.
    pub eps: f64,
    pub max_iter: usize,
    pub monitor: Option<&'a Monitor>,
    /// Keep every iterate (`x_{k-1/2}`, `x_k`, `p_{k-1}`, `h_{k-1}`) for inspection.
    pub record_states: bool,
}

impl<'a> RunOptions<'a> {
    pub fn new(eps: f64, max_iter: usize) -> Self {
        RunOptions {
            eps,
            max_iter,
            monitor: None,
            record_states: false,
        }
    }

    /// Runs exactly `max_iter` tests unless the objective hits zero.
    pub fn fixed_iterations(max_iter: usize) -> Self {
        Self::new(f64::MIN_POSITIVE, max_iter)
    }

    pub fn with_monitor(mut self, monitor: &'a Monitor) -> Self {
        self.monitor = Some(monitor);
        self
    }

    pub fn recording_states(mut self) -> Self {
        self.record_states = true;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(crate::error::Error::param("eps", format!("must be positive, got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(crate::error::Error::param("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

/// Metrics of `x_{k-1/2}`, the iterate tested at iteration `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    /// Wall time since the run started, excluding monitoring.
    pub seconds: f64,
    /// `‖Rx − b‖²` of the image.
    pub f: f64,
    /// Value compared against `eps` (equal to `f` except for SupCG's `½f`).
    pub objective: f64,
    pub tv: f64,
    pub se: Option<f64>,
    /// Step-length counter `ℓ_k` entering iteration `k`.
    pub ell: u64,
    /// `‖s_k‖` of the perturbation applied after this test, if any.
    pub step_norm: Option<f64>,
}

/// Iterates held at the start of iteration `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateSnapshot {
    pub k: usize,
    /// `x_{k-1/2}`
    pub x_half: Vec<f64>,
    /// `x_k`
    pub x: Vec<f64>,
    /// `p_{k-1}` (empty for ART)
    pub p: Vec<f64>,
    /// `h_{k-1}` (empty for ART)
    pub h: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub k: usize,
    /// `x_{k-1/2}` in the solver's own variables.
    pub x_out: Image,
    pub status: RunStatus,
    pub trace: Vec<TraceRecord>,
    pub snapshots: Vec<IterateSnapshot>,
    pub init: Option<InitSnapshot>,
}

impl RunResult {
    /// `(k, SE)` of the trace record with the smallest selective error among
    /// the first `limit` records; ties go to the earliest.
    pub fn best_se(&self, limit: usize) -> Option<(usize, f64)> {
        self.trace
            .iter()
            .take(limit)
            .filter_map(|r| r.se.map(|se| (r.k, se)))
            .fold(None, |best, (k, se)| match best {
                Some((_, b)) if b <= se => best,
                _ => Some((k, se)),
            })
    }
}

/// Builds trace records while keeping monitoring cost out of the clock.
pub(crate) struct Recorder<'a> {
    start: Instant,
    excluded: Duration,
    monitor: Option<&'a Monitor>,
    pub trace: Vec<TraceRecord>,
}

impl<'a> Recorder<'a> {
    pub fn new(monitor: Option<&'a Monitor>) -> Self {
        Recorder {
            start: Instant::now(),
            excluded: Duration::ZERO,
            monitor,
            trace: Vec::new(),
        }
    }

    pub fn record(&mut self, k: usize, image: &Image, f: f64, objective: f64, ell: u64) {
        let seconds = (self.start.elapsed() - self.excluded).as_secs_f64();
        let t0 = Instant::now();
        let tv = tv_value(image);
        let se = self.monitor.map(|m| m.selective_error(image));
        self.excluded += t0.elapsed();
        self.trace.push(TraceRecord {
            k,
            seconds,
            f,
            objective,
            tv,
            se,
            ell,
            step_norm: None,
        });
    }

    pub fn set_step_norm(&mut self, norm: f64) {
        if let Some(last) = self.trace.last_mut() {
            last.step_norm = Some(norm);
        }
    }
}
