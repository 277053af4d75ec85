//! Damped Newton minimisation of a discrete energy over a set of free nodes.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{EnvelopeCholesky, SymCsr};
use crate::mesh::{MeshError, NodalField};
use crate::operator::{Assembler, OperatorError, OperatorSpec};
use crate::scalar::Real;

/// Result of a converged Dirichlet or obstacle solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport<T> {
    #[serde(skip)]
    pub solution: NodalField<T>,
    pub iterations: usize,
    pub final_residual_norm: T,
    pub energy_value: T,
    /// Max-norm residual after each iteration.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError<T: Real> {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("no convergence after {iterations} iterations (best residual {best_residual})")]
    NonConvergence { iterations: usize, best_residual: T, best: NodalField<T>, residual_history: Vec<f64> },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    /// Hessian regularisation `|∇u|² → |∇u|² + eps²`.
    pub eps: T,
}

impl<T: Real> NewtonOptions<T> {
    pub const MAX_ITER: usize = 500;

    pub fn new(tol: T, gradient_scale: T) -> Self {
        NewtonOptions { tol, max_iter: Self::MAX_ITER, eps: T::lit(1e-8) * gradient_scale }
    }
}

/// Lower bounds on some free nodes; a node is bounded when `bounded[i]`.
#[derive(Clone, Copy)]
pub(crate) struct Bounds<'a, T> {
    pub lower: &'a [T],
    pub bounded: &'a [bool],
}

pub(crate) enum Outcome {
    Converged,
    /// The step was cut at these bounded nodes, now sitting on their bound.
    Blocked(Vec<usize>),
}

/// Sparsity pattern and fill-reducing ordering over the free nodes.
pub(crate) struct DofSystem<T> {
    pub dofs: Vec<usize>,
    pub dof_of: Vec<usize>,
    pub matrix: SymCsr<T>,
    pub perm: Vec<usize>,
}

impl<T: Real> DofSystem<T> {
    pub fn new(asm: &Assembler<'_, T>, free: &[bool]) -> Self {
        let n = free.len();
        let dofs: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let mut dof_of = vec![usize::MAX; n];
        for (d, &i) in dofs.iter().enumerate() {
            dof_of[i] = d;
        }
        let adjacency: Vec<Vec<usize>> = dofs
            .iter()
            .map(|&i| asm.mesh.neighbors(i).iter().map(|&j| dof_of[j]).filter(|&d| d != usize::MAX).collect())
            .collect();
        let matrix = SymCsr::from_adjacency(&adjacency);
        let perm = matrix.rcm_ordering();
        DofSystem { dofs, dof_of, matrix, perm }
    }
}

/// Tracks iterations and residuals across the phases of one solve.
pub(crate) struct Progress<T> {
    pub iterations: usize,
    pub history: Vec<f64>,
    pub best: Option<(T, Vec<T>)>,
}

impl<T: Real> Progress<T> {
    pub fn new() -> Self {
        Progress { iterations: 0, history: Vec::new(), best: None }
    }

    pub fn record(&mut self, residual: T, u: &[T]) {
        self.history.push(residual.as_f64());
        if self.best.as_ref().is_none_or(|(r, _)| residual < *r) {
            self.best = Some((residual, u.to_vec()));
        }
    }

    pub fn failure(self, fallback: &[T]) -> SolveError<T> {
        let (best_residual, best) = self.best.unwrap_or((T::infinity(), fallback.to_vec()));
        SolveError::NonConvergence {
            iterations: self.iterations,
            best_residual,
            best: NodalField::new(best),
            residual_history: self.history,
        }
    }
}

pub(crate) fn max_free<T: Real>(r: &[T], dofs: &[usize]) -> T {
    dofs.iter().fold(T::zero(), |m, &i| m.max(r[i].abs()))
}

/// Minimises the assembler's energy over the nodes flagged in `free`,
/// holding every other node of `u` fixed. With `bounds`, a step that would
/// push a bounded node below its bound is shortened and the blocking nodes
/// are reported so the caller can fix them.
pub(crate) fn newton_minimize<T: Real>(
    asm: &Assembler<'_, T>,
    u: &mut [T],
    free: &[bool],
    bounds: Option<Bounds<'_, T>>,
    opts: &NewtonOptions<T>,
    progress: &mut Progress<T>,
) -> Result<Outcome, ()> {
    let mut sys = DofSystem::new(asm, free);
    if sys.dofs.is_empty() {
        return Ok(Outcome::Converged);
    }
    let p = asm.p();
    let noise = T::epsilon() * T::lit(1e3);
    let mut r = asm.gradient(u);
    let mut rmax = max_free(&r, &sys.dofs);
    let mut energy = asm.energy(u);
    let mut trial = u.to_vec();
    loop {
        if rmax <= opts.tol {
            return Ok(Outcome::Converged);
        }
        if progress.iterations >= opts.max_iter {
            return Err(());
        }
        progress.iterations += 1;

        asm.jacobian_into(u, opts.eps, &sys.dof_of, &mut sys.matrix);
        let rhs: Vec<T> = sys.dofs.iter().map(|&i| -r[i]).collect();
        let newton = EnvelopeCholesky::factor(&sys.matrix, &sys.perm).ok().map(|f| f.solve(&rhs));
        let jacobi: Vec<T> =
            (0..sys.dofs.len()).map(|d| rhs[d] / sys.matrix.diag(d).max(T::min_positive_value())).collect();

        let mut accepted = None;
        for dir in newton.iter().chain(std::iter::once(&jacobi)) {
            if dir.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let slope: T = p * sys.dofs.iter().zip(dir).map(|(&i, &d)| r[i] * d).sum::<T>();
            if !(slope < T::zero()) {
                continue;
            }
            let (alpha_max, blockers) = step_limit(u, dir, &sys.dofs, bounds);
            let mut alpha = alpha_max.min(T::one());
            while alpha > T::lit(1e-12) {
                for (k, &i) in sys.dofs.iter().enumerate() {
                    trial[i] = u[i] + alpha * dir[k];
                }
                let blocked = alpha == alpha_max && !blockers.is_empty();
                if blocked {
                    if let Some(b) = bounds {
                        for &i in &blockers {
                            trial[i] = b.lower[i];
                        }
                    }
                }
                let e1 = asm.energy(&trial);
                let sufficient = e1 <= energy + T::lit(1e-4) * alpha * slope;
                let flat = e1 <= energy + noise * energy.abs();
                if sufficient || flat {
                    let r1 = asm.gradient(&trial);
                    let rmax1 = max_free(&r1, &sys.dofs);
                    if sufficient || rmax1 < rmax {
                        accepted = Some((e1, r1, rmax1, blocked.then(|| blockers.clone())));
                        break;
                    }
                }
                alpha *= T::lit(0.5);
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((e1, r1, rmax1, blocked)) = accepted else {
            return Err(());
        };
        u.copy_from_slice(&trial);
        energy = e1;
        r = r1;
        rmax = rmax1;
        progress.record(rmax, u);
        if let Some(nodes) = blocked {
            return Ok(Outcome::Blocked(nodes));
        }
    }
}

/// Largest step `α ≤ 1` keeping bounded free nodes feasible, and the nodes
/// attaining it.
fn step_limit<T: Real>(u: &[T], dir: &[T], dofs: &[usize], bounds: Option<Bounds<'_, T>>) -> (T, Vec<usize>) {
    let Some(b) = bounds else {
        return (T::infinity(), Vec::new());
    };
    let mut alpha = T::infinity();
    let mut who = Vec::new();
    for (k, &i) in dofs.iter().enumerate() {
        if !b.bounded[i] || dir[k] >= T::zero() {
            continue;
        }
        let a = ((b.lower[i] - u[i]) / dir[k]).max(T::zero());
        if a < alpha {
            alpha = a;
            who.clear();
            who.push(i);
        } else if a == alpha {
            who.push(i);
        }
    }
    if alpha > T::one() {
        who.clear();
    }
    (alpha, who)
}

/// Harmonic (`p = 2`) extension of the fixed values with the same weight,
/// anisotropy and lumped-mass choice, used as the Newton starting point.
pub(crate) fn linear_initial_guess<T: Real>(
    spec: &OperatorSpec<T>,
    mesh: &crate::mesh::DomainMesh<T>,
    with_mass: bool,
    u: &mut [T],
    free: &[bool],
) {
    let spec2 = OperatorSpec { p: T::lit(2.0), ..*spec };
    let mut asm = Assembler::new(mesh, &spec2);
    if with_mass {
        asm = asm.with_mass();
    }
    let mut sys = DofSystem::new(&asm, free);
    if sys.dofs.is_empty() {
        return;
    }
    let r = asm.gradient(u);
    asm.jacobian_into(u, T::zero(), &sys.dof_of, &mut sys.matrix);
    let rhs: Vec<T> = sys.dofs.iter().map(|&i| -r[i]).collect();
    if let Ok(f) = EnvelopeCholesky::factor(&sys.matrix, &sys.perm) {
        let d = f.solve(&rhs);
        if d.iter().all(|v| v.is_finite()) {
            for (k, &i) in sys.dofs.iter().enumerate() {
                u[i] += d[k];
            }
        }
    }
}
