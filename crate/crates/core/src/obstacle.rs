//! The obstacle problem: minimise the energy over fields with trace `f` that
//! stay above `ψ`.
//!
//! Projected nonlinear Gauss–Seidel sweeps (ascending node order) settle the
//! contact set, then a primal-feasible active-set Newton iteration finishes
//! the solve. On a mesh the solution is nodal, so its lower semicontinuous
//! regularisation is the solution itself.

use crate::dirichlet::gradient_scale;
use crate::mesh::{DomainMesh, NodalField};
use crate::operator::{Assembler, OperatorSpec};
use crate::scalar::Real;
use crate::solver::{
    linear_initial_guess, max_free, newton_minimize, Bounds, NewtonOptions, Outcome, Progress, SolveError, SolveReport,
};

/// Obstacle `ψ` and boundary data `f`. Nodes with `constrained[i] == false`
/// carry the obstacle `−∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSpec<T> {
    pub obstacle: NodalField<T>,
    pub constrained: Vec<bool>,
    pub data: NodalField<T>,
}

impl<T: Real> ObstacleSpec<T> {
    /// Obstacle constrained at every node.
    pub fn new(obstacle: NodalField<T>, data: NodalField<T>) -> Self {
        let constrained = vec![true; obstacle.len()];
        ObstacleSpec { obstacle, constrained, data }
    }

    /// The obstacle `−∞`: the problem reduces to the Dirichlet problem.
    pub fn unconstrained(data: NodalField<T>) -> Self {
        let n = data.len();
        ObstacleSpec { obstacle: NodalField::zeros(n), constrained: vec![false; n], data }
    }

    pub fn with_mask(obstacle: NodalField<T>, constrained: Vec<bool>, data: NodalField<T>) -> Self {
        ObstacleSpec { obstacle, constrained, data }
    }

    /// Obstacle value at node `i`, `−∞` when unconstrained.
    pub fn lower(&self, i: usize) -> T {
        if self.constrained[i] {
            self.obstacle[i]
        } else {
            T::neg_infinity()
        }
    }

    pub fn validate(&self, mesh: &DomainMesh<T>) -> Result<(), SolveError<T>> {
        let n = mesh.node_count();
        self.obstacle.check_len(n)?;
        self.data.check_len(n)?;
        if self.constrained.len() != n {
            return Err(SolveError::Invalid(format!("mask has {} entries for {n} nodes", self.constrained.len())));
        }
        for i in 0..n {
            if self.constrained[i] && !self.obstacle[i].is_finite() {
                return Err(SolveError::Invalid(format!(
                    "obstacle at node {i} is {}; use the unconstrained mask for -inf",
                    self.obstacle[i]
                )));
            }
        }
        for &i in mesh.boundary_nodes() {
            if !self.data[i].is_finite() {
                return Err(SolveError::Invalid(format!("boundary data at node {i} is not finite")));
            }
            if self.constrained[i] && self.obstacle[i] > self.data[i] {
                return Err(SolveError::Invalid(format!(
                    "infeasible: obstacle {} exceeds boundary data {} at node {i}",
                    self.obstacle[i], self.data[i]
                )));
            }
        }
        Ok(())
    }
}

const MAX_SWEEPS: usize = 10;
const MAX_PHASES: usize = 2000;

/// Solves the obstacle problem. On return `u ≥ ψ` at every constrained
/// node, `u = f` on the boundary, every interior residual is `≥ −tol`, and
/// residuals at nodes strictly above the obstacle are `≤ tol` in magnitude.
pub fn solve_obstacle<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    ob: &ObstacleSpec<T>,
    tol: T,
) -> Result<SolveReport<T>, SolveError<T>> {
    spec.validate()?;
    ob.validate(mesh)?;
    if !(tol > T::zero()) {
        return Err(SolveError::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    let n = mesh.node_count();
    let interior = mesh.interior_nodes();
    let mut u = vec![T::zero(); n];
    for &i in mesh.boundary_nodes() {
        u[i] = ob.data[i];
    }
    let mut free: Vec<bool> = mesh.boundary_mask().iter().map(|b| !b).collect();
    linear_initial_guess(spec, mesh, false, &mut u, &free);
    for &i in interior {
        u[i] = u[i].max(ob.lower(i));
    }

    let bounded: Vec<bool> = (0..n).map(|i| ob.constrained[i] && !mesh.is_boundary(i)).collect();
    let lower: Vec<T> = (0..n).map(|i| if bounded[i] { ob.obstacle[i] } else { T::zero() }).collect();
    let bounds = Bounds { lower: &lower, bounded: &bounded };
    let scale = gradient_scale(
        mesh,
        mesh.boundary_nodes()
            .iter()
            .map(|&i| ob.data[i])
            .chain(interior.iter().filter(|&&i| bounded[i]).map(|&i| lower[i])),
    );
    let opts = NewtonOptions::new(tol, scale);
    let asm = Assembler::new(mesh, spec);
    let mut progress = Progress::new();

    let contact = |u: &[T]| -> Vec<bool> { (0..n).map(|i| bounded[i] && u[i] <= lower[i]).collect() };
    let mut previous = contact(&u);
    let mut stable = 0;
    for _ in 0..MAX_SWEEPS {
        sweep(&asm, &mut u, interior, bounds, opts.eps, tol);
        progress.iterations += 1;
        let now = contact(&u);
        stable = if now == previous { stable + 1 } else { 0 };
        previous = now;
        if stable >= 2 {
            break;
        }
    }

    for &i in interior {
        free[i] = !previous[i];
    }
    let mut phases = 0;
    loop {
        phases += 1;
        if phases > MAX_PHASES {
            return Err(progress.failure(&u));
        }
        let before = u.clone();
        match newton_minimize(&asm, &mut u, &free, Some(bounds), &opts, &mut progress) {
            Err(()) => return Err(progress.failure(&u)),
            Ok(Outcome::Blocked(nodes)) => {
                for i in nodes {
                    free[i] = false;
                }
                if u == before {
                    // zero-length step: let a sweep move the iterate instead
                    sweep(&asm, &mut u, interior, bounds, opts.eps, tol);
                    for &i in interior {
                        free[i] = !(bounded[i] && u[i] <= lower[i]);
                    }
                }
            }
            Ok(Outcome::Converged) => {
                let r = asm.gradient(&u);
                let mut released = false;
                for &i in interior {
                    if !free[i] && r[i] < -tol {
                        free[i] = true;
                        released = true;
                    }
                }
                if !released {
                    let inactive: Vec<usize> = interior.iter().copied().filter(|&i| free[i]).collect();
                    return Ok(SolveReport {
                        final_residual_norm: max_free(&r, &inactive),
                        energy_value: asm.energy(&u),
                        solution: NodalField::new(u),
                        iterations: progress.iterations,
                        residual_history: progress.history,
                    });
                }
            }
        }
    }
}

/// One projected Gauss–Seidel sweep over `nodes` in the given order.
fn sweep<T: Real>(asm: &Assembler<'_, T>, u: &mut [T], nodes: &[usize], bounds: Bounds<'_, T>, eps: T, tol: T) {
    for &i in nodes {
        let lo = bounds.bounded[i].then(|| bounds.lower[i]);
        u[i] = scalar_minimizer(asm, u, i, lo, eps, tol);
    }
}

/// Minimiser of the energy in the single unknown `u_i`, clamped below by
/// `lower`. The derivative is increasing in `u_i`, so a guarded Newton
/// iteration on a bracket finds its root.
fn scalar_minimizer<T: Real>(asm: &Assembler<'_, T>, u: &mut [T], i: usize, lower: Option<T>, eps: T, tol: T) -> T {
    let start = u[i];
    let g = |u: &mut [T], t: T| {
        u[i] = t;
        asm.gradient_at(u, i)
    };
    let target = tol * T::lit(0.1);
    if let Some(l) = lower {
        if g(u, l) >= T::zero() {
            u[i] = start;
            return l;
        }
    }
    let g0 = g(u, start);
    if g0.abs() <= target {
        u[i] = start;
        return start;
    }
    let d0 = asm.diagonal_at(u, i, eps).max(T::min_positive_value());
    let step0 = (g0 / d0).abs().max(T::epsilon() * (T::one() + start.abs()));
    let (mut lo, mut hi) = (start, start);
    if g0 > T::zero() {
        let mut step = step0;
        lo = start - step;
        if let Some(l) = lower {
            lo = lo.max(l);
        }
        while g(u, lo) > T::zero() {
            hi = lo;
            step *= T::lit(2.0);
            lo = start - step;
            if let Some(l) = lower {
                lo = lo.max(l);
            }
            if !step.is_finite() {
                break;
            }
        }
    } else {
        let mut step = step0;
        hi = start + step;
        while g(u, hi) < T::zero() {
            lo = hi;
            step *= T::lit(2.0);
            hi = start + step;
            if !step.is_finite() {
                break;
            }
        }
    }
    let mut t = if g0 > T::zero() { lo } else { hi };
    for _ in 0..200 {
        let gt = g(u, t);
        if gt.abs() <= target {
            break;
        }
        if gt > T::zero() {
            hi = t;
        } else {
            lo = t;
        }
        if hi - lo <= T::lit(4.0) * T::epsilon() * (T::one() + lo.abs().max(hi.abs())) {
            break;
        }
        let dt = asm.diagonal_at(u, i, eps);
        let newton = t - gt / dt;
        t = if dt > T::zero() && newton > lo && newton < hi { newton } else { (lo + hi) * T::lit(0.5) };
    }
    u[i] = start;
    t
}
