//! Upper and lower approximants of Perron solutions for perturbed boundary
//! data `f + h`, with `h` supported on a boundary node set `E`.
//!
//! The upper approximant at level `j` is the obstacle solution with obstacle
//! and boundary data `Hf + c ψ_j`, where `ψ_j` comes from small-capacity
//! neighbourhoods of `E` and `c = max(1, max h⁺)` stands in for the value `+∞`
//! that `ψ_j` takes on `E` in the limit. Each `u_j` dominates the perturbed
//! data at boundary nodes, so it is a member of the upper class and bounds the
//! upper Perron solution from above; the report brackets the Perron solution,
//! it does not compute it. The lower approximant is the negated upper
//! approximant for `(−f, −h)`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{box_side, build_psi_sequence, capacity_box, estimate_capacity, CapacityError, PsiSequence};
use crate::dirichlet::solve_dirichlet;
use crate::mesh::{DomainMesh, NodalField};
use crate::obstacle::{solve_obstacle, ObstacleSpec};
use crate::operator::{residual, OperatorError, OperatorSpec};
use crate::scalar::Real;
use crate::solver::SolveError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerronError<T: Real> {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Capacity(#[from] CapacityError<T>),
    #[error(transparent)]
    Solve(#[from] SolveError<T>),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("candidate rejected ({clause}): {detail}")]
    Rejected { clause: String, detail: String },
}

/// Where a perturbation lives, resolved against a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbationSupport {
    Empty,
    /// The boundary node nearest to `at`.
    Node {
        at: [f64; 2],
    },
    /// Boundary nodes within `1e-9` of the segment `[from, to]`.
    Segment {
        from: [f64; 2],
        to: [f64; 2],
    },
}

impl PerturbationSupport {
    pub fn resolve<T: Real>(&self, mesh: &DomainMesh<T>) -> Result<Vec<usize>, String> {
        match *self {
            PerturbationSupport::Empty => Ok(Vec::new()),
            PerturbationSupport::Node { at } => mesh
                .boundary_nodes()
                .iter()
                .copied()
                .min_by(|&a, &b| dist(mesh.node_f64(a), at).total_cmp(&dist(mesh.node_f64(b), at)))
                .map(|i| vec![i])
                .ok_or_else(|| "mesh has no boundary nodes".to_string()),
            PerturbationSupport::Segment { from, to } => {
                let mut nodes: Vec<usize> = mesh
                    .boundary_nodes()
                    .iter()
                    .copied()
                    .filter(|&i| segment_distance(mesh.node_f64(i), from, to) <= 1e-9)
                    .collect();
                nodes.sort_unstable();
                if nodes.is_empty() {
                    return Err(format!("no boundary node lies on the segment {from:?}-{to:?}"));
                }
                Ok(nodes)
            }
        }
    }
}

/// Perturbation `h`: `values[k]` at boundary node `support[k]`, zero
/// elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub support: Vec<usize>,
    pub values: Vec<f64>,
    pub profile: String,
}

impl PerturbationSpec {
    pub fn none() -> Self {
        PerturbationSpec { support: Vec::new(), values: Vec::new(), profile: "none".into() }
    }

    /// `h = value` on every node of `support`.
    pub fn constant(support: Vec<usize>, value: f64) -> Self {
        let values = vec![value; support.len()];
        PerturbationSpec { support, values, profile: format!("constant {value}") }
    }

    pub fn negated(&self) -> Self {
        PerturbationSpec {
            support: self.support.clone(),
            values: self.values.iter().map(|v| -v).collect(),
            profile: format!("negated {}", self.profile),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Multiplier of `ψ_j`: large enough that `c ψ_j ≥ h` on `E`.
    pub fn amplitude(&self) -> f64 {
        self.values.iter().fold(1.0, |m, &v| m.max(v))
    }

    pub fn field<T: Real>(&self, n: usize) -> NodalField<T> {
        let mut h = vec![T::zero(); n];
        for (&i, &v) in self.support.iter().zip(&self.values) {
            h[i] = T::lit(v);
        }
        NodalField::new(h)
    }

    pub fn validate<T: Real>(&self, mesh: &DomainMesh<T>) -> Result<(), String> {
        if self.support.len() != self.values.len() {
            return Err(format!("{} support nodes but {} values", self.support.len(), self.values.len()));
        }
        let mut seen = vec![false; mesh.node_count()];
        for (&i, &v) in self.support.iter().zip(&self.values) {
            if i >= mesh.node_count() {
                return Err(format!("support node {i} out of range"));
            }
            if !mesh.is_boundary(i) {
                return Err(format!("support node {i} is not a boundary node"));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("support node {i} listed twice"));
            }
            if !v.is_finite() {
                return Err(format!("value at node {i} is {v}; use a finite cap level"));
            }
        }
        Ok(())
    }
}

/// A `ψ` sequence built on a box around `E` and carried over to the domain
/// mesh.
#[derive(Debug, Clone)]
pub struct PsiOnMesh<T> {
    pub sequence: PsiSequence<T>,
    /// `ψ_1, …, ψ_K` at the domain nodes.
    pub psi: Vec<NodalField<T>>,
    pub box_side: f64,
    pub box_h: f64,
}

/// Shortest edge of the mesh, the default spacing of capacity boxes.
pub fn shortest_edge<T: Real>(mesh: &DomainMesh<T>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..mesh.node_count() {
        for &j in mesh.neighbors(i) {
            best = best.min(dist(mesh.node_f64(i), mesh.node_f64(j)));
        }
    }
    best
}

/// Capacity box around `set`: centred at the set's node nearest to its
/// centroid, side `max(4, 4 diam(E) + 4)` rounded up to an even number of
/// cells of width `h`.
pub fn box_for_set<T: Real>(mesh: &DomainMesh<T>, set: &[usize], h: f64) -> Result<DomainMesh<T>, String> {
    if set.is_empty() {
        return Err("empty set".into());
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(format!("box spacing must be positive, got {h}"));
    }
    let pts: Vec<[f64; 2]> = set.iter().map(|&i| mesh.node_f64(i)).collect();
    let k = pts.len() as f64;
    let centroid = [pts.iter().map(|p| p[0]).sum::<f64>() / k, pts.iter().map(|p| p[1]).sum::<f64>() / k];
    let center = *pts.iter().min_by(|a, b| dist(**a, centroid).total_cmp(&dist(**b, centroid))).expect("nonempty");
    let diam = pts.iter().flat_map(|a| pts.iter().map(move |b| dist(*a, *b))).fold(0.0, f64::max);
    let side = (4.0 * diam + 4.0).max(4.0);
    let cells = 2.0 * (side / (2.0 * h) - 1e-9).ceil();
    Ok(capacity_box(center, cells * h, h))
}

/// Box nodes at the coordinates of `set` (nearest node when not aligned).
pub fn map_nodes<T: Real>(from: &DomainMesh<T>, to: &DomainMesh<T>, set: &[usize]) -> Vec<usize> {
    let index = NodeIndex::new(to);
    let mut out: Vec<usize> = set
        .iter()
        .map(|&i| {
            let p = from.node_f64(i);
            index.find(p).unwrap_or_else(|| {
                (0..to.node_count())
                    .min_by(|&a, &b| dist(to.node_f64(a), p).total_cmp(&dist(to.node_f64(b), p)))
                    .expect("nonempty mesh")
            })
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Values of the box field `u` at the nodes of `mesh`; zero outside the box.
pub fn transfer<T: Real>(box_mesh: &DomainMesh<T>, u: &NodalField<T>, mesh: &DomainMesh<T>) -> NodalField<T> {
    let index = NodeIndex::new(box_mesh);
    let locator = box_mesh.locator();
    NodalField::new(
        (0..mesh.node_count())
            .map(|i| {
                let p = mesh.node_f64(i);
                match index.find(p) {
                    Some(k) => u[k],
                    None => locator.evaluate(u, p).unwrap_or_else(T::zero),
                }
            })
            .collect(),
    )
}

/// Builds `ψ_1..ψ_K` for the support of `pert` on a box of spacing `box_h`
/// and transfers them to `mesh`.
pub fn psi_for_perturbation<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    pert: &PerturbationSpec,
    depth: usize,
    box_h: f64,
    tol: T,
) -> Result<PsiOnMesh<T>, PerronError<T>> {
    pert.validate(mesh).map_err(PerronError::Invalid)?;
    if depth == 0 {
        return Err(PerronError::Invalid("depth must be at least 1".into()));
    }
    if pert.is_empty() {
        let sequence = build_psi_sequence(mesh, spec, &[], depth, tol)?;
        let psi = vec![NodalField::zeros(mesh.node_count()); depth];
        return Ok(PsiOnMesh { sequence, psi, box_side: 0.0, box_h });
    }
    let bx = box_for_set(mesh, &pert.support, box_h).map_err(PerronError::Invalid)?;
    let set = map_nodes(mesh, &bx, &pert.support);
    let sequence = build_psi_sequence(&bx, spec, &set, depth, tol)?;
    let psi = (1..=depth).map(|j| transfer(&bx, sequence.psi(j), mesh)).collect();
    let side = box_side(&bx);
    Ok(PsiOnMesh { sequence, psi, box_side: side, box_h })
}

/// Upper approximant: obstacle solution for obstacle and data `Hf + c ψ_j`.
pub fn upper_envelope_approx<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    hf: &NodalField<T>,
    pert: &PerturbationSpec,
    psi_j: &NodalField<T>,
    tol: T,
) -> Result<NodalField<T>, PerronError<T>> {
    pert.validate(mesh).map_err(PerronError::Invalid)?;
    let c = T::lit(pert.amplitude());
    let g = hf.zip_map(psi_j, |a, b| a + c * b);
    let rep = solve_obstacle(mesh, spec, &ObstacleSpec::new(g.clone(), g), tol)?;
    Ok(rep.solution)
}

/// Lower approximant: `−(upper approximant for (−f, −h))`.
pub fn lower_envelope_approx<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    hf: &NodalField<T>,
    pert: &PerturbationSpec,
    psi_j: &NodalField<T>,
    tol: T,
) -> Result<NodalField<T>, PerronError<T>> {
    let neg = hf.map(|v| -v);
    Ok(upper_envelope_approx(mesh, spec, &neg, &pert.negated(), psi_j, tol)?.map(|v| -v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichOptions {
    pub tol: f64,
    /// Nodes at least this far from `E` form the far field.
    pub far_radius: f64,
}

/// One level `j` of a [`PerronSandwichReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichLevel {
    pub j: usize,
    /// `max(u_j − l_j)`.
    pub gap: f64,
    /// `max|u_j − Hf|` over all nodes.
    pub dist: f64,
    /// `max|u_j − Hf|` over nodes at distance `≥ far_radius` from `E`.
    pub far_dist: f64,
    /// `‖ψ_j‖` on the capacity box.
    pub psi_norm: f64,
    /// `min(u_j − Hf, Hf − l_j)`; `≥ −tol` when the ordering holds.
    pub sandwich_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerronSandwichReport<T> {
    pub h: f64,
    pub levels: Vec<SandwichLevel>,
    pub capacity_of_set: f64,
    pub tol: f64,
    /// `l_j ≤ Hf + tol` and `Hf ≤ u_j + tol` at every node and level.
    pub sandwich: bool,
    /// `u_{j+1} ≤ u_j + tol` nodewise.
    pub upper_monotone: bool,
    /// `max(u_j − Hf)` nonincreasing in `j` (within `tol`).
    pub dist_nonincreasing: bool,
    #[serde(skip)]
    pub hf: NodalField<T>,
    #[serde(skip)]
    pub upper: Vec<NodalField<T>>,
    #[serde(skip)]
    pub lower: Vec<NodalField<T>>,
}

impl<T> PerronSandwichReport<T> {
    pub fn final_level(&self) -> &SandwichLevel {
        self.levels.last().expect("depth is at least 1")
    }
}

/// Computes `u_j` and `l_j` for `j = 1..=K` and checks the sandwich and
/// monotonicity invariants.
pub fn perron_sandwich<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    f: &NodalField<T>,
    pert: &PerturbationSpec,
    psi: &PsiOnMesh<T>,
    opts: &SandwichOptions,
) -> Result<PerronSandwichReport<T>, PerronError<T>> {
    pert.validate(mesh).map_err(PerronError::Invalid)?;
    if psi.psi.iter().any(|s| s.len() != mesh.node_count()) {
        return Err(PerronError::Invalid("ψ fields do not match the mesh".into()));
    }
    let tol = T::lit(opts.tol);
    let hf = solve_dirichlet(mesh, spec, f, tol)?.solution;
    type Pair<T> = Result<(NodalField<T>, NodalField<T>), PerronError<T>>;
    let pairs: Vec<Pair<T>> = psi
        .psi
        .par_iter()
        .map(|s| {
            let u = upper_envelope_approx(mesh, spec, &hf, pert, s, tol)?;
            let l = lower_envelope_approx(mesh, spec, &hf, pert, s, tol)?;
            Ok((u, l))
        })
        .collect();
    let (mut upper, mut lower) = (Vec::new(), Vec::new());
    for r in pairs {
        let (u, l) = r?;
        upper.push(u);
        lower.push(l);
    }

    let far: Vec<bool> = if pert.is_empty() {
        vec![true; mesh.node_count()]
    } else {
        mesh.distance_to_set(&pert.support).iter().map(|&d| d >= opts.far_radius).collect()
    };
    let hf64: Vec<f64> = hf.iter().map(|v| v.as_f64()).collect();
    let mut levels = Vec::new();
    for (k, (u, l)) in upper.iter().zip(&lower).enumerate() {
        let (mut gap, mut d, mut fd, mut margin) = (f64::NEG_INFINITY, 0.0f64, 0.0f64, f64::INFINITY);
        for i in 0..mesh.node_count() {
            let (ui, li) = (u[i].as_f64(), l[i].as_f64());
            gap = gap.max(ui - li);
            let e = (ui - hf64[i]).abs();
            d = d.max(e);
            if far[i] {
                fd = fd.max(e);
            }
            margin = margin.min((ui - hf64[i]).min(hf64[i] - li));
        }
        levels.push(SandwichLevel {
            j: k + 1,
            gap,
            dist: d,
            far_dist: fd,
            psi_norm: psi.sequence.psi_norms.get(k).copied().unwrap_or(0.0),
            sandwich_margin: margin,
        });
    }
    let sandwich = levels.iter().all(|l| l.sandwich_margin >= -opts.tol);
    let upper_monotone = upper.windows(2).all(|w| w[1].iter().zip(w[0].iter()).all(|(a, b)| *a <= *b + tol));
    let excess: Vec<f64> = upper
        .iter()
        .map(|u| u.iter().zip(&hf64).map(|(a, b)| a.as_f64() - b).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let dist_nonincreasing = excess.windows(2).all(|w| w[1] <= w[0] + opts.tol);
    Ok(PerronSandwichReport {
        h: mesh.h().as_f64(),
        levels,
        capacity_of_set: psi.sequence.capacity_of_set,
        tol: opts.tol,
        sandwich,
        upper_monotone,
        dist_nonincreasing,
        hf,
        upper,
        lower,
    })
}

/// Interior and far-field size of `H(f + h) − Hf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectGap {
    /// `max|H(f + h) − Hf|` over interior nodes.
    pub interior: f64,
    /// The same over nodes at distance `≥ far_radius` from `E`.
    pub far: f64,
}

/// Solves for `H(f + h)` and `Hf` directly, the comparison used when no `ψ`
/// sequence exists for the support.
pub fn direct_perturbation_gap<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    f: &NodalField<T>,
    pert: &PerturbationSpec,
    opts: &SandwichOptions,
) -> Result<DirectGap, PerronError<T>> {
    pert.validate(mesh).map_err(PerronError::Invalid)?;
    let tol = T::lit(opts.tol);
    let hf = solve_dirichlet(mesh, spec, f, tol)?.solution;
    let fh = f.zip_map(&pert.field(mesh.node_count()), |a, b| a + b);
    let hfh = solve_dirichlet(mesh, spec, &fh, tol)?.solution;
    let d = mesh.distance_to_set(&pert.support);
    let (mut interior, mut far) = (0.0f64, 0.0f64);
    for &i in mesh.interior_nodes() {
        let e = (hfh[i] - hf[i]).abs().as_f64();
        interior = interior.max(e);
        if d[i] >= opts.far_radius {
            far = far.max(e);
        }
    }
    Ok(DirectGap { interior, far })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniquenessOptions {
    /// Solver tolerance for `Hf`.
    pub tol: f64,
    /// Largest admissible `max|u|`.
    pub bound: f64,
    /// Largest admissible interior residual of the candidate.
    pub residual_tol: f64,
    /// Pass iff `max|u − Hf|` is at most this.
    pub distance_tol: f64,
    /// Spacing of the capacity box for `E`; no estimate when `None`.
    pub box_h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessVerdict {
    pub distance: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub candidate_residual: f64,
    pub capacity_of_set: Option<f64>,
}

/// Compares a bounded, discretely harmonic candidate agreeing with `f` off
/// `E` against `Hf`.
pub fn uniqueness_check<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    f: &NodalField<T>,
    candidate: &NodalField<T>,
    set: &[usize],
    opts: &UniquenessOptions,
) -> Result<UniquenessVerdict, PerronError<T>> {
    let n = mesh.node_count();
    candidate.check_len(n).map_err(|e| PerronError::Invalid(e.to_string()))?;
    f.check_len(n).map_err(|e| PerronError::Invalid(e.to_string()))?;
    if let Some(&i) = set.iter().find(|&&i| i >= n || !mesh.is_boundary(i)) {
        return Err(PerronError::Invalid(format!("node {i} of E is not a boundary node")));
    }
    let reject = |clause: &str, detail: String| PerronError::Rejected { clause: clause.into(), detail };
    if !candidate.is_finite() {
        return Err(reject("bounded", "candidate has non-finite values".into()));
    }
    let sup = candidate.max_abs().as_f64();
    if sup > opts.bound {
        return Err(reject("bounded", format!("max|u| = {sup:.6e} exceeds the bound {:.6e}", opts.bound)));
    }
    let res = residual(mesh, spec, candidate)?.max_interior().as_f64();
    if res > opts.residual_tol {
        return Err(reject("harmonic", format!("interior residual {res:.3e} exceeds {:.3e}", opts.residual_tol)));
    }
    let mut in_set = vec![false; n];
    for &i in set {
        in_set[i] = true;
    }
    for &i in mesh.boundary_nodes() {
        let d = (candidate[i] - f[i]).abs().as_f64();
        if !in_set[i] && d > opts.distance_tol {
            return Err(reject("boundary data", format!("candidate differs from f by {d:.3e} at boundary node {i}")));
        }
    }
    let hf = solve_dirichlet(mesh, spec, f, T::lit(opts.tol))?.solution;
    let distance = candidate.max_abs_diff(&hf).as_f64();
    let capacity_of_set = match opts.box_h {
        Some(h) if !set.is_empty() => {
            let bx = box_for_set(mesh, set, h).map_err(PerronError::Invalid)?;
            let e = map_nodes(mesh, &bx, set);
            Some(estimate_capacity(&bx, spec, &e, T::lit(opts.tol))?.value.as_f64())
        }
        _ => opts.box_h.map(|_| 0.0),
    };
    Ok(UniquenessVerdict {
        distance,
        tolerance: opts.distance_tol,
        pass: distance <= opts.distance_tol,
        candidate_residual: res,
        capacity_of_set,
    })
}

/// Exact-coordinate lookup of mesh nodes on a hashed lattice.
struct NodeIndex {
    q: f64,
    tol: f64,
    map: HashMap<(i64, i64), usize>,
    nodes: Vec<[f64; 2]>,
}

impl NodeIndex {
    fn new<T: Real>(mesh: &DomainMesh<T>) -> Self {
        let nodes: Vec<[f64; 2]> = (0..mesh.node_count()).map(|i| mesh.node_f64(i)).collect();
        let q = shortest_edge(mesh) / 4.0;
        let mut map = HashMap::with_capacity(nodes.len());
        for (i, p) in nodes.iter().enumerate() {
            map.entry(key(*p, q)).or_insert(i);
        }
        NodeIndex { q, tol: q * 1e-6, map, nodes }
    }

    fn find(&self, p: [f64; 2]) -> Option<usize> {
        let &i = self.map.get(&key(p, self.q))?;
        (dist(self.nodes[i], p) <= self.tol).then_some(i)
    }
}

fn key(p: [f64; 2], q: f64) -> (i64, i64) {
    ((p[0] / q).round() as i64, (p[1] / q).round() as i64)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}
