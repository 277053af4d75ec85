//! Reference solutions that do not share code with the solvers: closed
//! forms, walk-on-spheres Monte Carlo for the Laplacian, and an exhaustive
//! active-set search for small linear obstacle problems.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::ScalarFunction;
use crate::mesh::{DomainDescriptor, DomainMesh, NodalField};
use crate::obstacle::ObstacleSpec;
use crate::operator::{OperatorSpec, WeightSpec};
use crate::scalar::{pairwise_sum, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{0}")]
    Rejected(String),
    #[error("instance too large: {0} candidate contact nodes (limit {MAX_CANDIDATES})")]
    TooLarge(usize),
}

/// A closed-form solution of the unweighted isotropic equation for a given
/// exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub function: ScalarFunction,
    pub p: f64,
}

impl ClosedForm {
    pub fn new(function: ScalarFunction, p: f64) -> Result<Self, OracleError> {
        if !function.is_p_harmonic(p) {
            return Err(OracleError::Rejected(format!("{function:?} is not a closed-form solution for p = {p}")));
        }
        Ok(ClosedForm { function, p })
    }

    /// Evaluates the form; rejects its singular point and, for the Poisson
    /// kernel, points outside the closed unit disc.
    pub fn eval(&self, x: [f64; 2]) -> Result<f64, OracleError> {
        if let Some(s) = self.function.singularity() {
            if (x[0] - s[0]).hypot(x[1] - s[1]) <= 1e-14 {
                return Err(OracleError::Rejected(format!("({}, {}) is the singular point", x[0], x[1])));
            }
        }
        if matches!(self.function, ScalarFunction::PoissonKernel { .. }) && x[0].hypot(x[1]) > 1.0 + 1e-12 {
            return Err(OracleError::Rejected("Poisson kernel is only defined on the closed unit disc".into()));
        }
        Ok(self.function.eval(x))
    }
}

pub fn eval_closed_form(form: &ClosedForm, x: [f64; 2]) -> Result<f64, OracleError> {
    form.eval(x)
}

/// Monte-Carlo estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WosEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Walks stop once within this distance of the boundary.
pub const WOS_SHELL: f64 = 1e-6;
const WOS_MAX_STEPS: usize = 100_000;

/// Estimates the harmonic extension of `f|∂Ω` at `x` by walk-on-spheres.
///
/// Sample `k` draws from a ChaCha8 generator keyed by `seed` on stream `k`,
/// so the estimate does not depend on the number of threads.
pub fn walk_on_spheres<T: Real>(
    domain: &DomainDescriptor,
    spec: &OperatorSpec<T>,
    f: &ScalarFunction,
    x: [f64; 2],
    n_samples: usize,
    seed: u64,
) -> Result<WosEstimate, OracleError> {
    let linear = spec.p.as_f64() == 2.0
        && matches!(spec.weight, WeightSpec::Constant { .. })
        && spec
            .anisotropy
            .is_none_or(|m| m[0][1].as_f64() == 0.0 && m[1][0].as_f64() == 0.0 && m[0][0].as_f64() == m[1][1].as_f64());
    if !linear {
        return Err(OracleError::Rejected("walk-on-spheres needs p = 2, a constant weight and isotropy".into()));
    }
    if n_samples < 100 {
        return Err(OracleError::Rejected(format!("need at least 100 samples, got {n_samples}")));
    }
    if !domain.contains(x) || domain.distance_to_boundary(x) <= WOS_SHELL {
        return Err(OracleError::Rejected(format!("({}, {}) is not an interior point", x[0], x[1])));
    }
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut pos = x;
            for _ in 0..WOS_MAX_STEPS {
                let d = domain.distance_to_boundary(pos);
                if d <= WOS_SHELL {
                    break;
                }
                let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                pos = [pos[0] + d * th.cos(), pos[1] + d * th.sin()];
            }
            f.eval(domain.nearest_boundary_point(pos))
        })
        .collect();
    let n = n_samples as f64;
    let mean = pairwise_sum(&values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    Ok(WosEstimate { estimate: mean, stderr: (var / n).sqrt(), samples: n_samples })
}

/// Largest number of interior nodes whose contact status is enumerated.
pub const MAX_CANDIDATES: usize = 15;
const MAX_DENSE: usize = 600;

/// Exact minimiser of the linear (`p = 2`, isotropic) obstacle problem by
/// trying every contact set.
///
/// Candidate contact nodes are the constrained interior nodes. When the
/// free-node stiffness is an M-matrix the comparison principle gives
/// `u ≥ Hf`, and nodes with `ψ < Hf` are dropped from the candidates.
pub fn brute_force_obstacle<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    ob: &ObstacleSpec<T>,
) -> Result<NodalField<T>, OracleError> {
    if spec.p.as_f64() != 2.0 || spec.anisotropy.is_some() {
        return Err(OracleError::Rejected("brute-force obstacle oracle needs p = 2 and no anisotropy".into()));
    }
    ob.validate(mesh).map_err(|e| OracleError::Rejected(e.to_string()))?;
    let n = mesh.node_count();
    let interior: Vec<usize> = (0..n).filter(|&i| !mesh.is_boundary(i)).collect();
    let m = interior.len();
    if m > MAX_DENSE {
        return Err(OracleError::TooLarge(m));
    }
    let k = stiffness(mesh, &spec.weight);
    let mut local = vec![usize::MAX; n];
    for (a, &i) in interior.iter().enumerate() {
        local[i] = a;
    }
    let f = |i: usize| ob.data[i].as_f64();
    let psi = |i: usize| ob.obstacle[i].as_f64();

    let kff = DMatrix::from_fn(m, m, |a, b| k[(interior[a], interior[b])]);
    let load = DVector::from_fn(m, |a, _| {
        -(0..n).filter(|&j| mesh.is_boundary(j)).map(|j| k[(interior[a], j)] * f(j)).sum::<f64>()
    });
    let hf = kff.clone().cholesky().ok_or_else(|| OracleError::Rejected("singular stiffness".into()))?.solve(&load);
    let m_matrix = (0..m).all(|a| (0..m).all(|b| a == b || kff[(a, b)] <= 1e-14));
    let candidates: Vec<usize> = interior
        .iter()
        .copied()
        .filter(|&i| ob.constrained[i] && (!m_matrix || psi(i) >= hf[local[i]] - 1e-12))
        .collect();
    if candidates.len() > MAX_CANDIDATES {
        return Err(OracleError::TooLarge(candidates.len()));
    }

    let energy = |u: &DVector<f64>| {
        let full = DVector::from_fn(n, |i, _| if local[i] == usize::MAX { f(i) } else { u[local[i]] });
        full.dot(&(&k * &full))
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << candidates.len()) {
        let active: Vec<bool> = {
            let mut a = vec![false; m];
            for (c, &i) in candidates.iter().enumerate() {
                if mask & (1 << c) != 0 {
                    a[local[i]] = true;
                }
            }
            a
        };
        let free: Vec<usize> = (0..m).filter(|&a| !active[a]).collect();
        let mut u = DVector::zeros(m);
        for a in 0..m {
            if active[a] {
                u[a] = psi(interior[a]);
            }
        }
        if !free.is_empty() {
            let kk = DMatrix::from_fn(free.len(), free.len(), |r, c| kff[(free[r], free[c])]);
            let rhs = DVector::from_fn(free.len(), |r, _| {
                load[free[r]] - (0..m).filter(|&a| active[a]).map(|a| kff[(free[r], a)] * u[a]).sum::<f64>()
            });
            let Some(ch) = kk.cholesky() else { continue };
            let sol = ch.solve(&rhs);
            for (r, &a) in free.iter().enumerate() {
                u[a] = sol[r];
            }
        }
        let feasible = (0..m).all(|a| !ob.constrained[interior[a]] || u[a] >= psi(interior[a]) - 1e-12);
        if !feasible {
            continue;
        }
        let e = energy(&u);
        if best.as_ref().is_none_or(|(be, _)| e < *be) {
            best = Some((e, u));
        }
    }
    let (_, u) = best.ok_or_else(|| OracleError::Rejected("no feasible contact set".into()))?;
    Ok(NodalField::new((0..n).map(|i| T::lit(if local[i] == usize::MAX { f(i) } else { u[local[i]] })).collect()))
}

/// Largest number of unknowns in [`dense_capacity`].
pub const MAX_DENSE_CAPACITY: usize = 5000;

/// Capacity of `set` for `p = 2` and an isotropic operator by a dense
/// Cholesky solve of `(K + M) φ = 0` with `φ = 1` on the set and every node
/// sharing a triangle with it, and `φ = 0` on the mesh boundary. `M` is the
/// row-sum lumped weighted mass.
pub fn dense_capacity<T: Real>(
    box_mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    set: &[usize],
) -> Result<f64, OracleError> {
    if spec.p.as_f64() != 2.0 || spec.anisotropy.is_some() {
        return Err(OracleError::Rejected("dense capacity oracle needs p = 2 and no anisotropy".into()));
    }
    let n = box_mesh.node_count();
    let mut one = vec![false; n];
    for &i in set {
        one[i] = true;
    }
    for tri in box_mesh.triangles() {
        if tri.iter().any(|&i| set.contains(&i)) {
            for &i in tri {
                one[i] = true;
            }
        }
    }
    if (0..n).any(|i| one[i] && box_mesh.is_boundary(i)) {
        return Err(OracleError::Rejected("set touches the box boundary".into()));
    }
    let free: Vec<usize> = (0..n).filter(|&i| !one[i] && !box_mesh.is_boundary(i)).collect();
    if free.len() > MAX_DENSE_CAPACITY {
        return Err(OracleError::TooLarge(free.len()));
    }
    let mut a = stiffness(box_mesh, &spec.weight);
    let w = spec.weight.cast::<f64>();
    for tri in box_mesh.triangles() {
        let p = tri.map(|i| box_mesh.node_f64(i));
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
        let bc = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        for &i in tri {
            a[(i, i)] += w.eval(bc) * area / 3.0;
        }
    }
    let aff = DMatrix::from_fn(free.len(), free.len(), |r, c| a[(free[r], free[c])]);
    let rhs = DVector::from_fn(free.len(), |r, _| -(0..n).filter(|&j| one[j]).map(|j| a[(free[r], j)]).sum::<f64>());
    let sol = aff.cholesky().ok_or_else(|| OracleError::Rejected("singular system".into()))?.solve(&rhs);
    let mut u = DVector::zeros(n);
    for i in 0..n {
        if one[i] {
            u[i] = 1.0;
        }
    }
    for (r, &i) in free.iter().enumerate() {
        u[i] = sol[r];
    }
    Ok(u.dot(&(&a * &u)))
}

/// Dense P1 stiffness `∫ w ∇φ_i·∇φ_j` with the weight at barycenters,
/// assembled from vertex coordinates.
fn stiffness<T: Real>(mesh: &DomainMesh<T>, weight: &WeightSpec<T>) -> DMatrix<f64> {
    let n = mesh.node_count();
    let mut k = DMatrix::zeros(n, n);
    for tri in mesh.triangles() {
        let p = tri.map(|i| mesh.node_f64(i));
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
        let area = area.abs();
        let bc = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        let w = weight.cast::<f64>().eval(bc);
        // ∇φ_a is the inward normal of the opposite edge scaled by 1/(2 area)
        let grad = |a: usize| {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            let e = [p[c][0] - p[b][0], p[c][1] - p[b][1]];
            let g = [-e[1] / (2.0 * area), e[0] / (2.0 * area)];
            let to_a = [p[a][0] - p[b][0], p[a][1] - p[b][1]];
            if g[0] * to_a[0] + g[1] * to_a[1] < 0.0 {
                [-g[0], -g[1]]
            } else {
                g
            }
        };
        let g = [grad(0), grad(1), grad(2)];
        for a in 0..3 {
            for b in 0..3 {
                k[(tri[a], tri[b])] += w * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    k
}
