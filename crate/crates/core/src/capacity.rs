//! Sobolev (p,w)-capacity of node sets on a box mesh, and the decreasing
//! sequence `ψ_j` built from small-capacity neighbourhoods.
//!
//! The capacity of `E` is approximated by the minimum of the full Sobolev
//! functional `Σ_t w|∇φ|^p|t| + Σ_i m_i|φ_i|^p` (lumped mass) over P1 fields
//! equal to 1 on `E` and its one-ring and 0 on the box boundary. The zero
//! condition on a bounded box stands in for membership in the whole-plane
//! Sobolev space, so the estimate errs on the large side and decreases as the
//! box grows.

use serde::Serialize;
use thiserror::Error;

use crate::dirichlet::solve_free;
use crate::mesh::{structured_rectangle, DomainDescriptor, DomainMesh, NodalField};
use crate::operator::{Assembler, OperatorSpec};
use crate::scalar::Real;
use crate::solver::SolveError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CapacityError<T: Real> {
    #[error("invalid set: {0}")]
    InvalidSet(String),
    #[error(transparent)]
    Solve(#[from] SolveError<T>),
    #[error(
        "capacity too large for level {level}: smallest neighbourhood has norm {best_norm} >= {threshold}; \
         maximal achievable depth is {achieved}"
    )]
    Unreachable { level: usize, best_norm: f64, threshold: f64, achieved: usize, norms: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityEstimate<T> {
    pub value: T,
    #[serde(skip)]
    pub minimizer: NodalField<T>,
    /// `(Σ w|∇φ|^p + m|φ|^p)^{1/p}`.
    pub norm_p: T,
    /// Nodes where the minimiser is pinned to 1 (`E` and its one-ring).
    #[serde(skip)]
    pub pinned: Vec<usize>,
    pub box_side: f64,
    pub h: f64,
}

/// Square box mesh `[c − s/2, c + s/2]²` with `round(s/h)` cells per side.
pub fn capacity_box<T: Real>(center: [f64; 2], side: f64, h: f64) -> DomainMesh<T> {
    let half = 0.5 * side;
    let lo = [center[0] - half, center[1] - half];
    let hi = [center[0] + half, center[1] + half];
    let n = (side / h).round().max(2.0) as usize;
    structured_rectangle(lo, hi, n, n, DomainDescriptor::rectangle(lo, hi))
}

pub(crate) fn box_side<T: Real>(mesh: &DomainMesh<T>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..mesh.node_count() {
        let p = mesh.node_f64(i);
        lo = lo.min(p[0]);
        hi = hi.max(p[0]);
    }
    hi - lo
}

/// Minimises the full Sobolev functional over fields equal to 1 on `E` and
/// its one-ring and 0 on the boundary of `box_mesh`.
pub fn estimate_capacity<T: Real>(
    box_mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    set: &[usize],
    tol: T,
) -> Result<CapacityEstimate<T>, CapacityError<T>> {
    let n = box_mesh.node_count();
    let side = box_side(box_mesh);
    let h = box_mesh.h().as_f64();
    if set.is_empty() {
        return Ok(CapacityEstimate {
            value: T::zero(),
            minimizer: NodalField::zeros(n),
            norm_p: T::zero(),
            pinned: Vec::new(),
            box_side: side,
            h,
        });
    }
    if let Some(&i) = set.iter().find(|&&i| i >= n) {
        return Err(CapacityError::InvalidSet(format!("node {i} out of range")));
    }
    let pinned = box_mesh.graph_ball(set, 1);
    if let Some(&i) = pinned.iter().find(|&&i| box_mesh.is_boundary(i)) {
        return Err(CapacityError::InvalidSet(format!("node {i} of the set or its one-ring touches the box boundary")));
    }
    let mut u = vec![T::zero(); n];
    let mut free: Vec<bool> = box_mesh.boundary_mask().iter().map(|b| !b).collect();
    for &i in &pinned {
        u[i] = T::one();
        free[i] = false;
    }
    let rep = solve_free(box_mesh, spec, u, &free, tol, T::one(), true)?;
    let phi = rep.solution.map(|v| v.max(T::zero()).min(T::one()));
    let value = Assembler::new(box_mesh, spec).with_mass().energy(phi.as_slice());
    Ok(CapacityEstimate { value, norm_p: value.powf(T::one() / spec.p), minimizer: phi, pinned, box_side: side, h })
}

/// Full Sobolev norm `(Σ w|∇u|^p + m|u|^p)^{1/p}` on a mesh.
pub fn sobolev_norm<T: Real>(mesh: &DomainMesh<T>, spec: &OperatorSpec<T>, u: &NodalField<T>) -> T {
    Assembler::new(mesh, spec).with_mass().energy(u.as_slice()).powf(T::one() / spec.p)
}

/// Outcome of the invariant checks on a [`PsiSequence`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiInvariants {
    pub nonnegative: bool,
    pub decreasing: bool,
    /// `‖ψ_j‖ < 2^{-j}` for every level.
    pub norms_below: bool,
    /// `ψ_j ≥ m` on `U_{j+m}` for every valid pair.
    pub lower_bounds: bool,
    /// Worst `min_{U_{j+m}} ψ_j − m` over valid pairs.
    pub worst_lower_margin: f64,
}

impl PsiInvariants {
    pub fn all(&self) -> bool {
        self.nonnegative && self.decreasing && self.norms_below && self.lower_bounds
    }
}

/// Neighbourhoods `U_1 ⊇ … ⊇ U_{K+1}` of `E` with `‖φ_k‖ < 2^{-k}`, and the
/// partial sums `ψ_j = Σ_{k=j+1}^{K+1} φ_k` for `j = 1..=K`.
///
/// The last term `φ_{K+1}` is kept so that `ψ_K` is not identically zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiSequence<T> {
    pub depth: usize,
    /// Graph radius of each `U_k` around `E`.
    pub radii: Vec<usize>,
    #[serde(skip)]
    pub neighborhoods: Vec<Vec<usize>>,
    #[serde(skip)]
    pub phi: Vec<NodalField<T>>,
    pub phi_norms: Vec<f64>,
    #[serde(skip)]
    pub psi: Vec<NodalField<T>>,
    pub psi_norms: Vec<f64>,
    pub invariants: PsiInvariants,
    pub capacity_of_set: f64,
}

impl<T: Real> PsiSequence<T> {
    /// `ψ_j` for `1 ≤ j ≤ depth`.
    pub fn psi(&self, j: usize) -> &NodalField<T> {
        &self.psi[j - 1]
    }

    /// `U_k` for `1 ≤ k ≤ depth + 1`.
    pub fn neighborhood(&self, k: usize) -> &[usize] {
        &self.neighborhoods[k - 1]
    }

    /// Pinned set (neighbourhood plus one-ring) on which `φ_k = 1`.
    pub fn support_of_one(&self, k: usize) -> Vec<usize> {
        let phi = &self.phi[k - 1];
        (0..phi.len()).filter(|&i| phi[i] == T::one()).collect()
    }
}

/// Builds the `ψ` sequence for `E` to depth `K`.
///
/// `U_k` is the largest graph ball around `E` with radius at most
/// `min(radius(U_{k−1}), K + 1 − k)` whose capacity is below `2^{-kp}`. The
/// radius cap counts graph steps, so the neighbourhoods shrink physically as
/// the mesh is refined. When not even `E` itself
/// qualifies at some level the construction fails and reports the depth that
/// was reachable.
pub fn build_psi_sequence<T: Real>(
    box_mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    set: &[usize],
    depth: usize,
    tol: T,
) -> Result<PsiSequence<T>, CapacityError<T>> {
    let n = box_mesh.node_count();
    let p = spec.p.as_f64();
    let terms = depth + 1;
    if set.is_empty() {
        let zero = NodalField::zeros(n);
        return Ok(PsiSequence {
            depth,
            radii: vec![0; terms],
            neighborhoods: vec![Vec::new(); terms],
            phi: vec![zero.clone(); terms],
            phi_norms: vec![0.0; terms],
            psi: vec![zero; depth],
            psi_norms: vec![0.0; depth],
            invariants: PsiInvariants {
                nonnegative: true,
                decreasing: true,
                norms_below: true,
                lower_bounds: true,
                worst_lower_margin: 0.0,
            },
            capacity_of_set: 0.0,
        });
    }

    let max_radius = max_clear_radius(box_mesh, set);
    let mut cache: Vec<Option<CapacityEstimate<T>>> = vec![None; max_radius + 1];
    let mut norm_at = |r: usize| -> Result<f64, CapacityError<T>> {
        if cache[r].is_none() {
            cache[r] = Some(estimate_capacity(box_mesh, spec, &box_mesh.graph_ball(set, r), tol)?);
        }
        Ok(cache[r].as_ref().expect("cached").norm_p.as_f64())
    };

    let capacity_of_set = norm_at(0)?.powf(p);
    let mut radii = Vec::with_capacity(terms);
    let mut norms = Vec::with_capacity(terms);
    let mut upper = max_radius;
    for k in 1..=terms {
        upper = upper.min(terms - k);
        let threshold = 0.5f64.powi(k as i32);
        let best = norm_at(0)?;
        if !(best < threshold) {
            return Err(CapacityError::Unreachable { level: k, best_norm: best, threshold, achieved: k - 1, norms });
        }
        // norms grow with the radius: find the largest admissible radius ≤ upper
        let (mut lo, mut hi) = (0, upper);
        if norm_at(hi)? < threshold {
            lo = hi;
        } else {
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if norm_at(mid)? < threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        radii.push(lo);
        norms.push(norm_at(lo)?);
        upper = lo;
    }

    let neighborhoods: Vec<Vec<usize>> = radii.iter().map(|&r| box_mesh.graph_ball(set, r)).collect();
    let phi: Vec<NodalField<T>> = radii.iter().map(|&r| cache[r].as_ref().expect("cached").minimizer.clone()).collect();
    let mut psi = Vec::with_capacity(depth);
    for j in 1..=depth {
        let mut s = NodalField::zeros(n);
        for f in &phi[j..] {
            s = s.zip_map(f, |a, b| a + b);
        }
        psi.push(s);
    }
    let psi_norms: Vec<f64> = psi.iter().map(|s| sobolev_norm(box_mesh, spec, s).as_f64()).collect();
    let invariants = check_invariants(&neighborhoods, &psi, &psi_norms);
    Ok(PsiSequence { depth, radii, neighborhoods, phi, phi_norms: norms, psi, psi_norms, invariants, capacity_of_set })
}

/// Largest graph radius whose ball, plus one-ring, stays off the box
/// boundary.
fn max_clear_radius<T: Real>(mesh: &DomainMesh<T>, set: &[usize]) -> usize {
    let mut r = 0;
    loop {
        let ball = mesh.graph_ball(set, r + 2);
        if ball.iter().any(|&i| mesh.is_boundary(i)) || r > 4096 {
            return r;
        }
        r += 1;
    }
}

fn check_invariants<T: Real>(neighborhoods: &[Vec<usize>], psi: &[NodalField<T>], norms: &[f64]) -> PsiInvariants {
    let depth = psi.len();
    let nonnegative = psi.iter().all(|s| s.iter().all(|&v| v >= T::zero()));
    let decreasing = psi.windows(2).all(|w| w[1].iter().zip(w[0].iter()).all(|(a, b)| a <= b));
    let norms_below = norms.iter().enumerate().all(|(k, &v)| v < 0.5f64.powi(k as i32 + 1));
    let mut worst = f64::INFINITY;
    for j in 1..=depth {
        for m in 1..=(depth + 1 - j) {
            let u = &neighborhoods[j + m - 1];
            let s = &psi[j - 1];
            let lowest = u.iter().map(|&i| s[i].as_f64()).fold(f64::INFINITY, f64::min);
            worst = worst.min(lowest - m as f64);
        }
    }
    let worst = if worst.is_finite() { worst } else { 0.0 };
    PsiInvariants { nonnegative, decreasing, norms_below, lower_bounds: worst >= -1e-12, worst_lower_margin: worst }
}
