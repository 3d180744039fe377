use std::fmt;

use crate::error::{Error, Result};
use crate::linops::{add, axpy, dot, matvec, norm, normal_op, Image, SparseMatrix};
use crate::precond::{FourierPreconditioner, IdentityPreconditioner, Preconditioner};
use crate::tv::{s_tv, SuperiorizationParams, SuperiorizationState};

use super::{IterateSnapshot, Recorder, RunOptions, RunResult, RunStatus};

/// `|pᵀh|` at or below this value stops the iteration.
pub const BREAKDOWN_THRESHOLD: f64 = 1e-30;

/// A symmetric positive semidefinite system `Ax = y`.
pub trait QuadraticSystem: Sync {
    fn dim(&self) -> usize;

    /// `Ap`
    fn apply(&self, p: &[f64]) -> Vec<f64>;

    /// `y`
    fn rhs(&self) -> &[f64];

    /// `Ax − y`, the gradient of `½xᵀAx − yᵀx`.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.apply(x);
        axpy(-1.0, self.rhs(), &mut g);
        g
    }
}

/// The normal equations `RᵀRx = Rᵀb` of a projection problem. `A` is applied
/// as two sparse products and never formed.
#[derive(Debug)]
pub struct ProjectionSystem<'a> {
    r: &'a SparseMatrix,
    b: &'a [f64],
    y: Vec<f64>,
}

impl<'a> ProjectionSystem<'a> {
    pub fn new(r: &'a SparseMatrix, b: &'a [f64]) -> Result<Self> {
        if b.len() != r.n_rows() {
            return Err(Error::DimensionMismatch {
                what: "data",
                expected: r.n_rows(),
                found: b.len(),
            });
        }
        let y = crate::linops::rmatvec(r, b);
        Ok(ProjectionSystem { r, b, y })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        self.r
    }

    pub fn data(&self) -> &[f64] {
        self.b
    }

    /// `‖Rx − b‖²`
    pub fn residual(&self, x: &[f64]) -> f64 {
        matvec(self.r, x)
            .iter()
            .zip(self.b)
            .map(|(p, q)| (p - q) * (p - q))
            .sum()
    }
}

impl QuadraticSystem for ProjectionSystem<'_> {
    fn dim(&self) -> usize {
        self.r.n_cols()
    }

    fn apply(&self, p: &[f64]) -> Vec<f64> {
        normal_op(self.r, p)
    }

    fn rhs(&self) -> &[f64] {
        &self.y
    }
}

/// `(NANᵀ) x̂ = Ny` for a symmetric transform `N`.
pub struct TransformedSystem<'a, S: QuadraticSystem> {
    inner: &'a S,
    n: &'a FourierPreconditioner,
    ny: Vec<f64>,
}

impl<'a, S: QuadraticSystem> TransformedSystem<'a, S> {
    pub fn new(inner: &'a S, n: &'a FourierPreconditioner) -> Result<Self> {
        let dim = n.rows() * n.cols();
        if dim != inner.dim() {
            return Err(Error::DimensionMismatch {
                what: "transform grid",
                expected: inner.dim(),
                found: dim,
            });
        }
        let ny = n.apply_n(inner.rhs());
        Ok(TransformedSystem { inner, n, ny })
    }
}

impl<S: QuadraticSystem> QuadraticSystem for TransformedSystem<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, p: &[f64]) -> Vec<f64> {
        self.n.apply_n(&self.inner.apply(&self.n.apply_n(p)))
    }

    fn rhs(&self) -> &[f64] {
        &self.ny
    }
}

/// A small dense system, row-major.
#[derive(Clone, Debug)]
pub struct DenseSystem {
    n: usize,
    a: Vec<f64>,
    y: Vec<f64>,
}

impl DenseSystem {
    pub fn new(a: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if a.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: "dense matrix",
                expected: n * n,
                found: a.len(),
            });
        }
        Ok(DenseSystem { n, a, y })
    }
}

impl QuadraticSystem for DenseSystem {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, p: &[f64]) -> Vec<f64> {
        self.a.chunks(self.n).map(|row| dot(row, p)).collect()
    }

    fn rhs(&self) -> &[f64] {
        &self.y
    }
}

/// The conjugate-gradient iterate `x` with its last direction `p` and `h = Ap`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcgState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub h: Vec<f64>,
}

/// Quantities of the initialization step.
#[derive(Clone, Debug, PartialEq)]
pub struct InitSnapshot {
    pub g0: Vec<f64>,
    pub z0: Vec<f64>,
    pub alpha0: f64,
}

/// `pᵀh` fell to [`BREAKDOWN_THRESHOLD`] or below.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Breakdown {
    pub pth: f64,
}

impl fmt::Display for Breakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "conjugate-gradient breakdown: pᵀh = {:e}", self.pth)
    }
}

impl std::error::Error for Breakdown {}

fn step_length(g: &[f64], p: &[f64], h: &[f64]) -> std::result::Result<f64, Breakdown> {
    let pth = dot(p, h);
    if pth.abs() <= BREAKDOWN_THRESHOLD {
        return Err(Breakdown { pth });
    }
    Ok(-dot(g, p) / pth)
}

/// First step from `x0`: `p₀ = −Mg₀` followed by an exact line search.
pub fn initialize(
    system: &dyn QuadraticSystem,
    m: &dyn Preconditioner,
    x0: &[f64],
) -> std::result::Result<(PcgState, InitSnapshot), Breakdown> {
    let g0 = system.gradient(x0);
    let z0 = m.apply(&g0);
    let p: Vec<f64> = z0.iter().map(|v| -v).collect();
    let h = system.apply(&p);
    let alpha0 = step_length(&g0, &p, &h)?;
    let mut x = x0.to_vec();
    axpy(alpha0, &p, &mut x);
    Ok((PcgState { x, p, h }, InitSnapshot { g0, z0, alpha0 }))
}

/// One preconditioned conjugate-gradient update of `state`, in place.
///
/// On breakdown `x` is left unchanged.
pub fn u_pcg(
    state: &mut PcgState,
    system: &dyn QuadraticSystem,
    m: &dyn Preconditioner,
) -> std::result::Result<(), Breakdown> {
    let g = system.gradient(&state.x);
    let z = m.apply(&g);
    let beta = dot(&z, &state.h) / dot(&state.p, &state.h);
    for (pi, zi) in state.p.iter_mut().zip(&z) {
        *pi = -zi + beta * *pi;
    }
    state.h = system.apply(&state.p);
    let alpha = step_length(&g, &state.p, &state.h)?;
    axpy(alpha, &state.p, &mut state.x);
    Ok(())
}

/// Unpreconditioned update, run through the same code as [`u_pcg`].
pub fn u_cg(
    state: &mut PcgState,
    system: &dyn QuadraticSystem,
) -> std::result::Result<(), Breakdown> {
    u_pcg(state, system, &IdentityPreconditioner)
}

/// Conjugate-gradient update on the transformed system `NANᵀx̂ = Ny`.
pub fn u_tpcg<S: QuadraticSystem>(
    state: &mut PcgState,
    system: &TransformedSystem<'_, S>,
) -> std::result::Result<(), Breakdown> {
    u_pcg(state, system, &IdentityPreconditioner)
}

#[derive(Clone, Copy)]
enum Variables<'a> {
    Image,
    /// Solver works on `x̂` with `x = Nᵀx̂`.
    Transformed(&'a FourierPreconditioner),
}

impl Variables<'_> {
    fn to_image(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Variables::Image => v.to_vec(),
            Variables::Transformed(n) => n.apply_n(v),
        }
    }

    fn step_from_image(&self, s: Vec<f64>) -> Vec<f64> {
        match self {
            Variables::Image => s,
            Variables::Transformed(n) => n.apply_n_inv_t(&s),
        }
    }
}

struct Driver<'a> {
    problem: &'a ProjectionSystem<'a>,
    system: &'a dyn QuadraticSystem,
    precond: &'a dyn Preconditioner,
    vars: Variables<'a>,
    half_objective: bool,
    sup: Option<SuperiorizationParams>,
}

impl Driver<'_> {
    fn run(&self, x0: &Image, opts: &RunOptions<'_>) -> Result<RunResult> {
        opts.validate()?;
        if x0.len() != self.system.dim() {
            return Err(Error::DimensionMismatch {
                what: "initial image",
                expected: self.system.dim(),
                found: x0.len(),
            });
        }
        let (rows, cols) = (x0.rows(), x0.cols());
        let mut rec = Recorder::new(opts.monitor);
        let mut snapshots = Vec::new();
        let evaluate = |rec: &mut Recorder<'_>, k: usize, v: &[f64], ell: u64| -> f64 {
            let img = self.vars.to_image(v);
            let f = self.problem.residual(&img);
            let objective = if self.half_objective { 0.5 * f } else { f };
            let img = Image::new(rows, cols, img).expect("image length checked");
            rec.record(k, &img, f, objective, ell);
            objective
        };
        let finish = |k, x: Vec<f64>, status, rec: Recorder<'_>, snapshots, init| RunResult {
            k,
            x_out: Image::new(rows, cols, x).expect("image length checked"),
            status,
            trace: rec.trace,
            snapshots,
            init,
        };

        let mut x_half = x0.data().to_vec();
        let (mut state, init) = match initialize(self.system, self.precond, &x_half) {
            Ok(v) => v,
            Err(_) => {
                let obj = evaluate(&mut rec, 1, &x_half, 0);
                let status = if obj <= opts.eps {
                    RunStatus::Converged
                } else {
                    RunStatus::Breakdown
                };
                return Ok(finish(1, x_half, status, rec, snapshots, None));
            }
        };
        let mut ell = SuperiorizationState::default();
        let mut k = 1;
        loop {
            let obj = evaluate(&mut rec, k, &x_half, ell.ell);
            if opts.record_states {
                snapshots.push(IterateSnapshot {
                    k,
                    x_half: x_half.clone(),
                    x: state.x.clone(),
                    p: state.p.clone(),
                    h: state.h.clone(),
                });
            }
            if obj <= opts.eps {
                return Ok(finish(k, x_half, RunStatus::Converged, rec, snapshots, Some(init)));
            }
            if k == opts.max_iter {
                return Ok(finish(k, x_half, RunStatus::MaxIterations, rec, snapshots, Some(init)));
            }
            if let Some(params) = &self.sup {
                let img = Image::new(rows, cols, self.vars.to_image(&state.x))?;
                let step = s_tv(&img, ell, params)?;
                ell = step.state;
                rec.set_step_norm(norm(&step.s));
                state.x = add(&state.x, &self.vars.step_from_image(step.s));
            }
            x_half.clone_from(&state.x);
            k += 1;
            if u_pcg(&mut state, self.system, self.precond).is_err() {
                let obj = evaluate(&mut rec, k, &x_half, ell.ell);
                let status = if obj <= opts.eps {
                    RunStatus::Converged
                } else {
                    RunStatus::Breakdown
                };
                return Ok(finish(k, x_half, status, rec, snapshots, Some(init)));
            }
        }
    }
}

/// Conjugate gradients on the normal equations with termination test `f ≤ eps`.
pub fn cg(problem: &ProjectionSystem<'_>, x0: &Image, opts: &RunOptions<'_>) -> Result<RunResult> {
    pcg(problem, x0, &IdentityPreconditioner, opts)
}

/// Preconditioned conjugate gradients with termination test `f ≤ eps`.
pub fn pcg(
    problem: &ProjectionSystem<'_>,
    x0: &Image,
    m: &dyn Preconditioner,
    opts: &RunOptions<'_>,
) -> Result<RunResult> {
    Driver {
        problem,
        system: problem,
        precond: m,
        vars: Variables::Image,
        half_objective: false,
        sup: None,
    }
    .run(x0, opts)
}

/// Superiorized CG. The termination test uses `f′ = ½‖Rx − b‖²`, so `opts.eps`
/// plays the role of `ε′ = ε/2`.
pub fn sup_cg(
    problem: &ProjectionSystem<'_>,
    x0: &Image,
    sup: &SuperiorizationParams,
    opts: &RunOptions<'_>,
) -> Result<RunResult> {
    Driver {
        problem,
        system: problem,
        precond: &IdentityPreconditioner,
        vars: Variables::Image,
        half_objective: true,
        sup: Some(*sup),
    }
    .run(x0, opts)
}

/// Superiorized PCG: TV perturbations in image space followed by PCG updates.
pub fn sup_pcg(
    problem: &ProjectionSystem<'_>,
    x0: &Image,
    sup: &SuperiorizationParams,
    m: &dyn Preconditioner,
    opts: &RunOptions<'_>,
) -> Result<RunResult> {
    Driver {
        problem,
        system: problem,
        precond: m,
        vars: Variables::Image,
        half_objective: false,
        sup: Some(*sup),
    }
    .run(x0, opts)
}

/// Superiorized CG on the transformed system, starting from `x̂₀`.
///
/// Trace metrics describe the image `Nᵀx̂`; `x_out` holds `x̂_{k-1/2}`.
pub fn sup_tpcg(
    problem: &ProjectionSystem<'_>,
    xhat0: &Image,
    sup: &SuperiorizationParams,
    n: &FourierPreconditioner,
    opts: &RunOptions<'_>,
) -> Result<RunResult> {
    let system = TransformedSystem::new(problem, n)?;
    Driver {
        problem,
        system: &system,
        precond: &IdentityPreconditioner,
        vars: Variables::Transformed(n),
        half_objective: false,
        sup: Some(*sup),
    }
    .run(xhat0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run_steps(system: &dyn QuadraticSystem, x0: &[f64], steps: usize) -> Vec<f64> {
        let (mut st, _) = initialize(system, &IdentityPreconditioner, x0).unwrap();
        for _ in 1..steps {
            if u_cg(&mut st, system).is_err() {
                break;
            }
        }
        st.x
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>();
            }
            a[i * n + i] += 0.5;
        }
        a
    }

    #[test]
    fn diagonal_system_solved_in_two_steps() {
        let sys = DenseSystem::new(vec![1.0, 0.0, 0.0, 4.0], vec![1.0, 4.0]).unwrap();
        let x = run_steps(&sys, &[0.0, 0.0], 2);
        assert!(norm(&sys.gradient(&x)) <= 1e-12);
        assert!((x[0] - 1.0).abs() <= 1e-12 && (x[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn identity_system_solved_by_initialization() {
        let sys = DenseSystem::new(vec![1.0, 0.0, 0.0, 1.0], vec![3.0, -2.0]).unwrap();
        let (st, init) = initialize(&sys, &IdentityPreconditioner, &[0.0, 0.0]).unwrap();
        assert_eq!(init.alpha0, 1.0);
        assert_eq!(st.x, vec![3.0, -2.0]);
    }

    #[test]
    fn random_spd_converges_within_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20;
        let a = random_spd(&mut rng, n);
        let x_true: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = a.chunks(n).map(|row| dot(row, &x_true)).collect();
        let sys = DenseSystem::new(a, y).unwrap();
        let x = run_steps(&sys, &vec![0.0; n], n + 5);
        let err = norm(&crate::linops::sub(&x, &x_true)) / norm(&x_true);
        assert!(err <= 1e-8, "relative error {err}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 6;
        let a = random_spd(&mut rng, n);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sys = DenseSystem::new(a, y).unwrap();
        let q = |x: &[f64]| 0.5 * dot(x, &sys.apply(x)) - dot(sys.rhs(), x);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = sys.gradient(&x);
        let h = 1e-6;
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (q(&xp) - q(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn projection_system_gradient_is_normal_residual() {
        let r = SparseMatrix::from_dense(3, 2, &[1.0, 2.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let b = [1.0, 2.0, 3.0];
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        // Rᵀ(Rx − b) at x = (1, 1): Rx = (3, 1, 1), residual (2, -1, -2)
        assert_eq!(sys.gradient(&[1.0, 1.0]), vec![0.0, 3.0]);
        assert_eq!(sys.residual(&[1.0, 1.0]), 9.0);
    }

    fn tiny_problem() -> (SparseMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dense: Vec<f64> = (0..30 * 16)
            .map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 })
            .collect();
        let r = SparseMatrix::from_dense(30, 16, &dense).unwrap();
        let b = (0..30).map(|_| rng.random_range(0.0..2.0)).collect();
        (r, b)
    }

    #[test]
    fn identity_preconditioner_reproduces_cg_bitwise() {
        let (r, b) = tiny_problem();
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        let x0 = Image::zeros(4, 4);
        let opts = RunOptions::fixed_iterations(12).recording_states();
        let a = cg(&sys, &x0, &opts).unwrap();
        let p = pcg(&sys, &x0, &IdentityPreconditioner, &opts).unwrap();
        assert_eq!(a.k, p.k);
        assert_eq!(a.snapshots, p.snapshots);
        assert_eq!(a.x_out, p.x_out);
    }

    #[test]
    fn trace_length_equals_k() {
        let (r, b) = tiny_problem();
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        let x0 = Image::zeros(4, 4);
        let res = cg(&sys, &x0, &RunOptions::fixed_iterations(7)).unwrap();
        assert_eq!(res.status, RunStatus::MaxIterations);
        assert_eq!(res.k, 7);
        let ks: Vec<usize> = res.trace.iter().map(|t| t.k).collect();
        assert_eq!(ks, (1..=7).collect::<Vec<_>>());
        // first test is at x0
        assert_eq!(res.trace[0].f, sys.residual(x0.data()));
        // CG decreases f monotonically after the first step
        for w in res.trace.windows(2) {
            assert!(w[1].f <= w[0].f * (1.0 + 1e-12));
        }
    }

    #[test]
    fn converged_run_meets_tolerance() {
        let (r, b) = tiny_problem();
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        let x0 = Image::zeros(4, 4);
        let pilot = cg(&sys, &x0, &RunOptions::fixed_iterations(6)).unwrap();
        let eps = pilot.trace[4].f;
        let res = cg(&sys, &x0, &RunOptions::new(eps, 100)).unwrap();
        assert_eq!(res.status, RunStatus::Converged);
        assert_eq!(res.k, 5);
        assert!(res.trace.last().unwrap().f <= eps);
        assert!(res.trace[..4].iter().all(|t| t.f > eps));
    }

    #[test]
    fn breakdown_at_least_squares_solution() {
        // R = [1; 1], b = (0, 2): the minimum f is 2 and CG reaches it in one step
        let r = SparseMatrix::from_dense(2, 1, &[1.0, 1.0]).unwrap();
        let b = [0.0, 2.0];
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        let x0 = Image::zeros(1, 1);
        let res = cg(&sys, &x0, &RunOptions::new(1.0, 50)).unwrap();
        assert_eq!(res.status, RunStatus::Breakdown);
        assert_eq!(res.k, 2);
        assert_eq!(res.x_out.data(), &[1.0]);
        assert_eq!(res.trace.len(), 2);

        let res = cg(&sys, &x0, &RunOptions::new(2.5, 50)).unwrap();
        assert_eq!(res.status, RunStatus::Converged);
    }

    #[test]
    fn breakdown_at_start_reports_x0() {
        let r = SparseMatrix::identity(2);
        let b = [1.0, 1.0];
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        let x0 = Image::constant(1, 2, 1.0);
        let res = cg(&sys, &x0, &RunOptions::new(1e-12, 50)).unwrap();
        assert_eq!((res.k, res.status), (1, RunStatus::Converged));
    }

    #[test]
    fn options_are_validated() {
        let r = SparseMatrix::identity(4);
        let b = [1.0; 4];
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        let x0 = Image::zeros(2, 2);
        assert!(cg(&sys, &x0, &RunOptions::new(0.0, 10)).is_err());
        assert!(cg(&sys, &x0, &RunOptions::new(1.0, 0)).is_err());
        assert!(cg(&sys, &Image::zeros(1, 3), &RunOptions::new(1.0, 10)).is_err());
    }

    #[test]
    fn tiny_perturbations_track_plain_cg() {
        let (r, b) = tiny_problem();
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        let x0 = Image::zeros(4, 4);
        let opts = RunOptions::fixed_iterations(8);
        let plain = cg(&sys, &x0, &opts).unwrap();
        let sup = SuperiorizationParams::new(1, 0.5, 1e-14).unwrap();
        let perturbed = sup_pcg(&sys, &x0, &sup, &IdentityPreconditioner, &opts).unwrap();
        for (p, q) in plain.trace.iter().zip(&perturbed.trace) {
            assert!((p.f - q.f).abs() <= 1e-9 * p.f);
        }
    }

    #[test]
    fn sup_cg_tests_half_residual() {
        let (r, b) = tiny_problem();
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        let sup = SuperiorizationParams::new(2, 0.9, 1e-3).unwrap();
        let res = sup_cg(&sys, &Image::zeros(4, 4), &sup, &RunOptions::fixed_iterations(5)).unwrap();
        for t in &res.trace {
            assert_eq!(t.objective, 0.5 * t.f);
        }
    }

    #[test]
    fn perturbation_bound_and_counter() {
        let (r, b) = tiny_problem();
        let sys = ProjectionSystem::new(&r, &b).unwrap();
        let sup = SuperiorizationParams::new(3, 0.8, 0.05).unwrap();
        let res = sup_pcg(
            &sys,
            &Image::zeros(4, 4),
            &sup,
            &IdentityPreconditioner,
            &RunOptions::fixed_iterations(10),
        )
        .unwrap();
        for t in &res.trace {
            assert!(t.ell >= ((t.k - 1) * sup.k) as u64);
            if let Some(s) = t.step_norm {
                assert!(s <= sup.step_bound(t.ell));
                assert!(s <= sup.step_bound(((t.k - 1) * sup.k) as u64));
            }
        }
        assert!(res.trace.last().unwrap().step_norm.is_none());
    }
}
