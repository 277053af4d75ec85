//! The discrete Sobolev solution `Hf`: the energy minimiser with trace `f`.

use serde::Serialize;

use crate::mesh::{DomainMesh, NodalField};
use crate::operator::{Assembler, OperatorSpec};
use crate::scalar::Real;
use crate::solver::{
    linear_initial_guess, max_free, newton_minimize, NewtonOptions, Progress, SolveError, SolveReport,
};

/// `1e-8 (1 + max |f|)` over the boundary nodes.
pub fn default_tolerance<T: Real>(mesh: &DomainMesh<T>, f: &NodalField<T>) -> T {
    let fmax = mesh.boundary_nodes().iter().fold(T::zero(), |m, &i| m.max(f[i].abs()));
    T::lit(1e-8) * (T::one() + fmax)
}

/// Typical gradient size of the boundary data, used to scale the Hessian
/// regularisation.
pub(crate) fn gradient_scale<T: Real>(mesh: &DomainMesh<T>, values: impl Iterator<Item = T>) -> T {
    let (lo, hi) = values.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (mut bl, mut bh) = ([T::infinity(); 2], [T::neg_infinity(); 2]);
    for p in mesh.nodes() {
        for k in 0..2 {
            bl[k] = bl[k].min(p[k]);
            bh[k] = bh[k].max(p[k]);
        }
    }
    let diam = (bh[0] - bl[0]).hypot(bh[1] - bl[1]);
    let osc = hi - lo;
    if osc > T::zero() && osc.is_finite() && diam > T::zero() {
        osc / diam
    } else {
        T::one()
    }
}

/// Solves `div A(x,∇u) = 0` with `u = f` on the boundary nodes. Interior
/// entries of `f` are ignored.
pub fn solve_dirichlet<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    f: &NodalField<T>,
    tol: T,
) -> Result<SolveReport<T>, SolveError<T>> {
    spec.validate()?;
    f.check_len(mesh.node_count())?;
    if !(tol > T::zero()) {
        return Err(SolveError::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    if mesh.boundary_nodes().iter().any(|&i| !f[i].is_finite()) {
        return Err(SolveError::Invalid("boundary data must be finite".into()));
    }
    let free: Vec<bool> = mesh.boundary_mask().iter().map(|b| !b).collect();
    let mut u = vec![T::zero(); mesh.node_count()];
    for &i in mesh.boundary_nodes() {
        u[i] = f[i];
    }
    let scale = gradient_scale(mesh, mesh.boundary_nodes().iter().map(|&i| f[i]));
    solve_free(mesh, spec, u, &free, tol, scale, false)
}

/// Minimises over the `free` nodes starting from the linear extension of
/// the fixed entries of `u`.
pub(crate) fn solve_free<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    mut u: Vec<T>,
    free: &[bool],
    tol: T,
    scale: T,
    with_mass: bool,
) -> Result<SolveReport<T>, SolveError<T>> {
    linear_initial_guess(spec, mesh, with_mass, &mut u, free);
    let mut asm = Assembler::new(mesh, spec);
    if with_mass {
        asm = asm.with_mass();
    }
    let opts = NewtonOptions::new(tol, scale);
    let mut progress = Progress::new();
    let dofs: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
    progress.record(max_free(&asm.gradient(&u), &dofs), &u);
    if newton_minimize(&asm, &mut u, free, None, &opts, &mut progress).is_err() {
        return Err(progress.failure(&u));
    }
    let r = asm.gradient(&u);
    Ok(SolveReport {
        final_residual_norm: max_free(&r, &dofs),
        energy_value: asm.energy(&u),
        solution: NodalField::new(u),
        iterations: progress.iterations,
        residual_history: progress.history,
    })
}

/// One row of [`monotone_data_study`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneDataLevel {
    pub j: usize,
    /// `max |H(f + 2^{-j}ψ) − Hf|`.
    pub gap: f64,
    /// Largest increase `H f_j − H f_{j−1}` over all nodes (≤ tol when
    /// monotone); for `j = 1` measured against `H(f + ψ)`.
    pub increase: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneDataStudy<T> {
    #[serde(skip)]
    pub hf: NodalField<T>,
    #[serde(skip)]
    pub iterates: Vec<NodalField<T>>,
    pub levels: Vec<MonotoneDataLevel>,
    pub monotone: bool,
    pub tol: f64,
}

/// Solves with data `f_j = f + 2^{-j}ψ` for `j = 1..=levels` and measures the
/// decrease of `H f_j` toward `Hf`.
pub fn monotone_data_study<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    f: &NodalField<T>,
    psi: &NodalField<T>,
    levels: usize,
    tol: T,
) -> Result<MonotoneDataStudy<T>, SolveError<T>> {
    psi.check_len(mesh.node_count())?;
    if mesh.boundary_nodes().iter().any(|&i| !(psi[i] >= T::zero())) {
        return Err(SolveError::Invalid("psi must be nonnegative on the boundary".into()));
    }
    let hf = solve_dirichlet(mesh, spec, f, tol)?.solution;
    let data = |j: i32| f.zip_map(psi, |a, b| a + T::lit(2f64.powi(-j)) * b);
    let mut previous = solve_dirichlet(mesh, spec, &data(0), tol)?.solution;
    let mut rows = Vec::with_capacity(levels);
    let mut iterates = Vec::with_capacity(levels);
    let mut monotone = true;
    for j in 1..=levels {
        let rep = solve_dirichlet(mesh, spec, &data(j as i32), tol)?;
        let u = rep.solution;
        let increase = u.iter().zip(previous.iter()).fold(f64::NEG_INFINITY, |m, (a, b)| m.max((*a - *b).as_f64()));
        monotone &= increase <= 2.0 * tol.as_f64();
        rows.push(MonotoneDataLevel { j, gap: u.max_abs_diff(&hf).as_f64(), increase, iterations: rep.iterations });
        iterates.push(u.clone());
        previous = u;
    }
    Ok(MonotoneDataStudy { hf, iterates, levels: rows, monotone, tol: tol.as_f64() })
}
