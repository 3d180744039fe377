//! Superiorized conjugate-gradient reconstruction for parallel-beam
//! transmission tomography.
//!
//! The pieces: sparse projection operators ([`linops`], [`geometry`]), the
//! total-variation perturbation ([`tv`]), Fourier-domain preconditioning
//! ([`precond`]), the iterative algorithms ([`solvers`]) and figures of merit
//! ([`metrics`]).

pub mod error;
pub mod geometry;
pub mod linops;
pub mod metrics;
pub mod precond;
pub mod solvers;
pub mod tv;

pub use error::{Error, Result};
pub use geometry::{ScanGeometry, Sinogram};
pub use linops::{Image, SparseMatrix};
pub use precond::{FourierPreconditioner, PreconditionerSpec};
pub use solvers::{RunOptions, RunResult, RunStatus};
pub use tv::SuperiorizationParams;
