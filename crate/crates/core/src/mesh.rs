//! Triangulated planar domains and piecewise-linear (P1) field primitives.
//!
//! Meshes are immutable once built. Refinement produces a new mesh in which
//! every parent node keeps its index and edge midpoints are appended in the
//! order the edges are first met while scanning triangles.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("mesh size {h_target} rejected: must lie in (0, {limit})")]
    InvalidMeshSize { h_target: f64, limit: f64 },
    #[error("triangle {0} has zero area")]
    ZeroAreaTriangle(usize),
    #[error("triangle {triangle} references node {node} but the mesh has {count} nodes")]
    BadIndex { triangle: usize, node: usize, count: usize },
    #[error("field has {got} entries, mesh has {expected} nodes")]
    FieldLength { expected: usize, got: usize },
    #[error("invalid mesh json: {0}")]
    Json(String),
}

/// Shape of the domain Ω. Coordinates are in abstract length units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum DomainDescriptor {
    /// `[0,1]²`.
    UnitSquare,
    Disc {
        center: [f64; 2],
        radius: f64,
    },
    /// Annulus centred at the origin.
    Annulus {
        r_in: f64,
        r_out: f64,
    },
    /// Simple, positively oriented polygon.
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

impl DomainDescriptor {
    /// Axis-aligned rectangle expressed as a polygon.
    pub fn rectangle(min: [f64; 2], max: [f64; 2]) -> Self {
        DomainDescriptor::Polygon { vertices: vec![min, [max[0], min[1]], max, [min[0], max[1]]] }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        match self {
            DomainDescriptor::UnitSquare => Ok(()),
            DomainDescriptor::Disc { center, radius } => {
                if !(radius.is_finite() && *radius > 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err(MeshError::DegenerateDomain(format!("disc radius {radius}")));
                }
                Ok(())
            }
            DomainDescriptor::Annulus { r_in, r_out } => {
                if !(r_in.is_finite() && r_out.is_finite() && 0.0 < *r_in && r_in < r_out) {
                    return Err(MeshError::DegenerateDomain(format!(
                        "annulus requires 0 < r_in < r_out, got ({r_in}, {r_out})"
                    )));
                }
                Ok(())
            }
            DomainDescriptor::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(MeshError::DegenerateDomain("polygon needs at least 3 vertices".into()));
                }
                if vertices.iter().flatten().any(|c| !c.is_finite()) {
                    return Err(MeshError::DegenerateDomain("non-finite polygon vertex".into()));
                }
                let area = polygon_signed_area(vertices);
                if area.abs() <= 1e-14 * self.diam().powi(2) {
                    return Err(MeshError::DegenerateDomain("polygon has zero area".into()));
                }
                if area < 0.0 {
                    return Err(MeshError::DegenerateDomain("polygon must be positively oriented".into()));
                }
                if polygon_self_intersects(vertices) {
                    return Err(MeshError::DegenerateDomain("polygon is not simple".into()));
                }
                Ok(())
            }
        }
    }

    pub fn diam(&self) -> f64 {
        match self {
            DomainDescriptor::UnitSquare => 2f64.sqrt(),
            DomainDescriptor::Disc { radius, .. } => 2.0 * radius,
            DomainDescriptor::Annulus { r_out, .. } => 2.0 * r_out,
            DomainDescriptor::Polygon { vertices } => {
                let mut d: f64 = 0.0;
                for a in vertices {
                    for b in vertices {
                        d = d.max(dist(*a, *b));
                    }
                }
                d
            }
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            DomainDescriptor::UnitSquare => 1.0,
            DomainDescriptor::Disc { radius, .. } => PI * radius * radius,
            DomainDescriptor::Annulus { r_in, r_out } => PI * (r_out * r_out - r_in * r_in),
            DomainDescriptor::Polygon { vertices } => polygon_signed_area(vertices),
        }
    }

    pub fn is_curved(&self) -> bool {
        matches!(self, DomainDescriptor::Disc { .. } | DomainDescriptor::Annulus { .. })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            DomainDescriptor::UnitSquare => (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]),
            DomainDescriptor::Disc { center, radius } => dist(p, *center) <= *radius,
            DomainDescriptor::Annulus { r_in, r_out } => {
                let r = norm(p);
                *r_in <= r && r <= *r_out
            }
            DomainDescriptor::Polygon { vertices } => point_in_polygon(vertices, p),
        }
    }

    /// Closest point of ∂Ω to `p`.
    pub fn nearest_boundary_point(&self, p: [f64; 2]) -> [f64; 2] {
        match self {
            DomainDescriptor::UnitSquare => {
                let square = DomainDescriptor::rectangle([0.0, 0.0], [1.0, 1.0]);
                square.nearest_boundary_point(p)
            }
            DomainDescriptor::Disc { center, radius } => project_to_circle(p, *center, *radius),
            DomainDescriptor::Annulus { r_in, r_out } => {
                let r = norm(p);
                let target = if (r - r_in).abs() <= (r_out - r).abs() { *r_in } else { *r_out };
                project_to_circle(p, [0.0, 0.0], target)
            }
            DomainDescriptor::Polygon { vertices } => {
                let n = vertices.len();
                let mut best = vertices[0];
                let mut best_d = f64::INFINITY;
                for i in 0..n {
                    let q = closest_on_segment(p, vertices[i], vertices[(i + 1) % n]);
                    let d = dist(p, q);
                    if d < best_d {
                        best_d = d;
                        best = q;
                    }
                }
                best
            }
        }
    }

    pub fn distance_to_boundary(&self, p: [f64; 2]) -> f64 {
        dist(p, self.nearest_boundary_point(p))
    }
}

fn project_to_circle(p: [f64; 2], center: [f64; 2], radius: f64) -> [f64; 2] {
    let d = [p[0] - center[0], p[1] - center[1]];
    let r = norm(d);
    if r == 0.0 {
        return [center[0] + radius, center[1]];
    }
    [center[0] + radius * d[0] / r, center[1] + radius * d[1] / r]
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0) };
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

fn polygon_signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn polygon_self_intersects(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

fn point_in_polygon(v: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = v.len();
    for i in 0..n {
        let q = closest_on_segment(p, v[i], v[(i + 1) % n]);
        if dist(p, q) <= 1e-14 {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn axis_aligned_rectangle(v: &[[f64; 2]]) -> Option<([f64; 2], [f64; 2])> {
    if v.len() != 4 {
        return None;
    }
    for i in 0..4 {
        let a = v[i];
        let b = v[(i + 1) % 4];
        if a[0] != b[0] && a[1] != b[1] {
            return None;
        }
    }
    let xmin = v.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let xmax = v.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let ymin = v.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let ymax = v.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    Some(([xmin, ymin], [xmax, ymax]))
}

/// Per-triangle data for P1 elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry<T> {
    pub area: T,
    /// Gradients of the three hat functions (constant on the triangle).
    pub grads: [[T; 2]; 3],
    pub barycenter: [T; 2],
}

/// One scalar per mesh node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodalField<T>(Vec<T>);

impl<T: Real> NodalField<T> {
    pub fn new(values: Vec<T>) -> Self {
        NodalField(values)
    }

    pub fn zeros(n: usize) -> Self {
        NodalField(vec![T::zero(); n])
    }

    pub fn constant(n: usize, c: T) -> Self {
        NodalField(vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        NodalField(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.len(), other.len(), "field length mismatch");
        NodalField(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.0.iter()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<(), MeshError> {
        if self.len() != n {
            return Err(MeshError::FieldLength { expected: n, got: self.len() });
        }
        Ok(())
    }
}

impl<T> Index<usize> for NodalField<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for NodalField<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

/// Conforming triangulation with boundary/interior node classification.
#[derive(Debug, Clone)]
pub struct DomainMesh<T> {
    nodes: Vec<[T; 2]>,
    triangles: Vec<[usize; 3]>,
    is_boundary: Vec<bool>,
    boundary_nodes: Vec<usize>,
    interior_nodes: Vec<usize>,
    geometry: Vec<ElementGeometry<T>>,
    node_triangles: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
    h: T,
    domain: Option<DomainDescriptor>,
}

impl<T: Real> DomainMesh<T> {
    /// Assembles a mesh from raw parts. Clockwise triangles are reoriented.
    pub fn from_parts(
        nodes: Vec<[T; 2]>,
        mut triangles: Vec<[usize; 3]>,
        is_boundary: Vec<bool>,
        domain: Option<DomainDescriptor>,
    ) -> Result<Self, MeshError> {
        let n = nodes.len();
        if is_boundary.len() != n {
            return Err(MeshError::FieldLength { expected: n, got: is_boundary.len() });
        }
        let mut geometry = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &k in tri.iter() {
                if k >= n {
                    return Err(MeshError::BadIndex { triangle: t, node: k, count: n });
                }
            }
            let mut g = element_geometry(&nodes, *tri);
            if g.area < T::zero() {
                tri.swap(1, 2);
                g = element_geometry(&nodes, *tri);
            }
            let scale = max_edge(&nodes, *tri);
            if !(g.area > T::lit(1e-14) * scale * scale) {
                return Err(MeshError::ZeroAreaTriangle(t));
            }
            geometry.push(g);
        }
        let mut node_triangles = vec![Vec::new(); n];
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut h = T::zero();
        for (t, tri) in triangles.iter().enumerate() {
            for a in 0..3 {
                node_triangles[tri[a]].push(t);
                for b in 0..3 {
                    if a != b {
                        neighbors[tri[a]].push(tri[b]);
                    }
                }
            }
            h = h.max(max_edge(&nodes, *tri));
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
            nb.dedup();
        }
        let boundary_nodes = (0..n).filter(|&i| is_boundary[i]).collect();
        let interior_nodes = (0..n).filter(|&i| !is_boundary[i]).collect();
        Ok(DomainMesh {
            nodes,
            triangles,
            is_boundary,
            boundary_nodes,
            interior_nodes,
            geometry,
            node_triangles,
            neighbors,
            h,
            domain,
        })
    }

    pub fn nodes(&self) -> &[[T; 2]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [T; 2] {
        self.nodes[i]
    }

    pub fn node_f64(&self, i: usize) -> [f64; 2] {
        [self.nodes[i][0].as_f64(), self.nodes[i][1].as_f64()]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn geometry(&self) -> &[ElementGeometry<T>] {
        &self.geometry
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.is_boundary[i]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.is_boundary
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    /// Triangles incident to node `i`.
    pub fn node_triangles(&self, i: usize) -> &[usize] {
        &self.node_triangles[i]
    }

    /// Nodes sharing a triangle with node `i` (excluding `i`).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Longest edge length.
    pub fn h(&self) -> T {
        self.h
    }

    pub fn domain(&self) -> Option<&DomainDescriptor> {
        self.domain.as_ref()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Max-norm distance between the P1 function `u` and `exact`, sampled at
    /// interior nodes, triangle barycenters and midpoints of edges that do not
    /// join two boundary nodes.
    pub fn sup_error(&self, u: &NodalField<T>, exact: impl Fn(f64, f64) -> f64) -> f64 {
        let v = |i: usize| u[i].as_f64();
        let mut err: f64 = 0.0;
        for &i in &self.interior_nodes {
            let p = self.node_f64(i);
            err = err.max((v(i) - exact(p[0], p[1])).abs());
        }
        for tri in &self.triangles {
            let ps = tri.map(|i| self.node_f64(i));
            let bx = (ps[0][0] + ps[1][0] + ps[2][0]) / 3.0;
            let by = (ps[0][1] + ps[1][1] + ps[2][1]) / 3.0;
            let ub = (v(tri[0]) + v(tri[1]) + v(tri[2])) / 3.0;
            err = err.max((ub - exact(bx, by)).abs());
            for a in 0..3 {
                let b = (a + 1) % 3;
                if self.is_boundary[tri[a]] && self.is_boundary[tri[b]] {
                    continue;
                }
                let mx = 0.5 * (ps[a][0] + ps[b][0]);
                let my = 0.5 * (ps[a][1] + ps[b][1]);
                err = err.max((0.5 * (v(tri[a]) + v(tri[b])) - exact(mx, my)).abs());
            }
        }
        err
    }

    pub fn interpolate(&self, f: impl Fn(T, T) -> T) -> NodalField<T> {
        NodalField(self.nodes.iter().map(|p| f(p[0], p[1])).collect())
    }

    /// Constant gradient of the P1 interpolant of `u` on triangle `t`.
    pub fn element_gradient(&self, u: &NodalField<T>, t: usize) -> [T; 2] {
        gradient_on(&self.geometry[t], &self.triangles[t], u.as_slice())
    }

    /// All nodes within graph distance `radius` of `seeds`, ascending.
    pub fn graph_ball(&self, seeds: &[usize], radius: usize) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        for &s in seeds {
            if depth[s] == usize::MAX {
                depth[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(i) = queue.pop_front() {
            if depth[i] == radius {
                continue;
            }
            for &j in &self.neighbors[i] {
                if depth[j] == usize::MAX {
                    depth[j] = depth[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        (0..self.node_count()).filter(|&i| depth[i] != usize::MAX).collect()
    }

    /// Euclidean distance from every node to the nearest node of `set`
    /// (infinite when `set` is empty).
    pub fn distance_to_set(&self, set: &[usize]) -> Vec<f64> {
        let pts: Vec<[f64; 2]> = set.iter().map(|&i| self.node_f64(i)).collect();
        (0..self.node_count())
            .map(|i| {
                let p = self.node_f64(i);
                pts.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Finds a node at `p` within `tol`.
    pub fn find_node(&self, p: [f64; 2], tol: f64) -> Option<usize> {
        (0..self.node_count()).find(|&i| dist(self.node_f64(i), p) <= tol)
    }

    pub fn locator(&self) -> PointLocator<'_, T> {
        PointLocator::new(self)
    }

    pub fn to_json(&self) -> MeshJson {
        MeshJson {
            nodes: (0..self.node_count()).map(|i| self.node_f64(i)).collect(),
            triangles: self.triangles.clone(),
            boundary: self.boundary_nodes.clone(),
        }
    }

    pub fn from_json(json: &MeshJson, domain: Option<DomainDescriptor>) -> Result<Self, MeshError> {
        let n = json.nodes.len();
        let mut flags = vec![false; n];
        for &b in &json.boundary {
            if b >= n {
                return Err(MeshError::Json(format!("boundary index {b} out of range")));
            }
            flags[b] = true;
        }
        let nodes = json.nodes.iter().map(|p| [T::lit(p[0]), T::lit(p[1])]).collect();
        DomainMesh::from_parts(nodes, json.triangles.clone(), flags, domain)
    }

    /// Same mesh in another scalar type.
    pub fn cast<U: Real>(&self) -> DomainMesh<U> {
        let nodes = self.nodes.iter().map(|p| [U::lit(p[0].as_f64()), U::lit(p[1].as_f64())]).collect();
        DomainMesh::from_parts(nodes, self.triangles.clone(), self.is_boundary.clone(), self.domain.clone())
            .expect("cast of a valid mesh")
    }
}

pub(crate) fn gradient_on<T: Real>(g: &ElementGeometry<T>, tri: &[usize; 3], u: &[T]) -> [T; 2] {
    let mut q = [T::zero(); 2];
    for a in 0..3 {
        let v = u[tri[a]];
        q[0] += v * g.grads[a][0];
        q[1] += v * g.grads[a][1];
    }
    q
}

fn element_geometry<T: Real>(nodes: &[[T; 2]], tri: [usize; 3]) -> ElementGeometry<T> {
    let [p0, p1, p2] = [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]];
    let two_area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let inv = T::one() / two_area;
    let grads = [
        [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
        [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
        [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
    ];
    let third = T::one() / T::lit(3.0);
    let mut barycenter = [(p0[0] + p1[0] + p2[0]) * third, (p0[1] + p1[1] + p2[1]) * third];
    // Power weights are singular or degenerate at the origin; never sample there.
    if barycenter[0].abs() < T::lit(1e-12) && barycenter[1].abs() < T::lit(1e-12) {
        barycenter[0] += T::lit(1e-9);
    }
    ElementGeometry { area: two_area / T::lit(2.0), grads, barycenter }
}

fn max_edge<T: Real>(nodes: &[[T; 2]], tri: [usize; 3]) -> T {
    let mut m = T::zero();
    for a in 0..3 {
        let p = nodes[tri[a]];
        let q = nodes[tri[(a + 1) % 3]];
        m = m.max((p[0] - q[0]).hypot(p[1] - q[1]));
    }
    m
}

/// JSON mesh exchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshJson {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<usize>,
}

/// Builds a conforming triangulation of `domain` with longest edge at most
/// `1.5 * h_target`.
pub fn build_mesh<T: Real>(domain: &DomainDescriptor, h_target: f64) -> Result<DomainMesh<T>, MeshError> {
    domain.validate()?;
    let diam = domain.diam();
    if !(h_target.is_finite() && h_target > 0.0 && h_target < diam) {
        return Err(MeshError::InvalidMeshSize { h_target, limit: diam });
    }
    match domain {
        DomainDescriptor::UnitSquare => {
            Ok(structured_rectangle([0.0, 0.0], [1.0, 1.0], cells(1.0, h_target), cells(1.0, h_target), domain.clone()))
        }
        DomainDescriptor::Polygon { vertices } => {
            if let Some((lo, hi)) = axis_aligned_rectangle(vertices) {
                let nx = cells(hi[0] - lo[0], h_target);
                let ny = cells(hi[1] - lo[1], h_target);
                return Ok(structured_rectangle(lo, hi, nx, ny, domain.clone()));
            }
            let tris = ear_clip(vertices)?;
            let nodes = vertices.iter().map(|p| [T::lit(p[0]), T::lit(p[1])]).collect();
            let mut mesh = DomainMesh::from_parts(nodes, tris, vec![true; vertices.len()], Some(domain.clone()))?;
            while mesh.h().as_f64() > 1.5 * h_target {
                mesh = refine(&mesh);
            }
            Ok(mesh)
        }
        DomainDescriptor::Disc { center, radius } => {
            let mut rings = (radius / h_target).ceil().max(1.0) as usize;
            loop {
                let mesh = disc_mesh::<T>(*center, *radius, rings, domain.clone())?;
                if mesh.h().as_f64() <= 1.5 * h_target {
                    return Ok(mesh);
                }
                rings += 1;
            }
        }
        DomainDescriptor::Annulus { r_in, r_out } => {
            let mut rings = ((r_out - r_in) / h_target).ceil().max(1.0) as usize;
            let mut per_length = 1.0 / h_target;
            loop {
                let mesh = annulus_mesh::<T>(*r_in, *r_out, rings, per_length, domain.clone())?;
                if mesh.h().as_f64() <= 1.5 * h_target {
                    return Ok(mesh);
                }
                rings += 1;
                per_length *= 1.1;
            }
        }
    }
}

fn cells(length: f64, h: f64) -> usize {
    ((length / h) - 1e-9).ceil().max(1.0) as usize
}

/// Structured triangulation of an axis-aligned rectangle, row-major node order,
/// every cell split along its south-west to north-east diagonal.
pub fn structured_rectangle<T: Real>(
    lo: [f64; 2],
    hi: [f64; 2],
    nx: usize,
    ny: usize,
    domain: DomainDescriptor,
) -> DomainMesh<T> {
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut flags = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx { hi[0] } else { lo[0] + (hi[0] - lo[0]) * i as f64 / nx as f64 };
            let y = if j == ny { hi[1] } else { lo[1] + (hi[1] - lo[1]) * j as f64 / ny as f64 };
            nodes.push([T::lit(x), T::lit(y)]);
            flags.push(i == 0 || j == 0 || i == nx || j == ny);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    DomainMesh::from_parts(nodes, tris, flags, Some(domain)).expect("structured rectangle is valid")
}

/// Triangulates the strip between two closed rings whose nodes are listed by
/// increasing angle starting at angle zero.
fn stitch_rings(
    inner: &[usize],
    inner_angles: &[f64],
    outer: &[usize],
    outer_angles: &[f64],
    tris: &mut Vec<[usize; 3]>,
) {
    let (n, m) = (inner.len(), outer.len());
    let next_inner = |i: usize| if i + 1 < n { inner_angles[i + 1] } else { 2.0 * PI };
    let next_outer = |j: usize| if j + 1 < m { outer_angles[j + 1] } else { 2.0 * PI };
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if j < m && (i == n || next_outer(j) <= next_inner(i)) {
            tris.push([inner[i % n], outer[j], outer[(j + 1) % m]]);
            j += 1;
        } else {
            tris.push([inner[i], outer[j % m], inner[(i + 1) % n]]);
            i += 1;
        }
    }
}

fn disc_mesh<T: Real>(
    center: [f64; 2],
    radius: f64,
    rings: usize,
    domain: DomainDescriptor,
) -> Result<DomainMesh<T>, MeshError> {
    let mut nodes = vec![[T::lit(center[0]), T::lit(center[1])]];
    let mut flags = vec![false];
    let mut tris = Vec::new();
    let mut prev: Vec<usize> = vec![0];
    let mut prev_angles = vec![0.0];
    for k in 1..=rings {
        let r = radius * k as f64 / rings as f64;
        let count = 6 * k;
        let ring: Vec<usize> = (nodes.len()..nodes.len() + count).collect();
        let angles: Vec<f64> = (0..count).map(|i| 2.0 * PI * i as f64 / count as f64).collect();
        for &a in &angles {
            nodes.push([T::lit(center[0] + r * a.cos()), T::lit(center[1] + r * a.sin())]);
            flags.push(k == rings);
        }
        if k == 1 {
            for j in 0..count {
                tris.push([0, ring[j], ring[(j + 1) % count]]);
            }
        } else {
            stitch_rings(&prev, &prev_angles, &ring, &angles, &mut tris);
        }
        prev = ring;
        prev_angles = angles;
    }
    DomainMesh::from_parts(nodes, tris, flags, Some(domain))
}

fn annulus_mesh<T: Real>(
    r_in: f64,
    r_out: f64,
    rings: usize,
    per_length: f64,
    domain: DomainDescriptor,
) -> Result<DomainMesh<T>, MeshError> {
    let mut nodes = Vec::new();
    let mut flags = Vec::new();
    let mut tris = Vec::new();
    let mut prev: Vec<usize> = Vec::new();
    let mut prev_angles: Vec<f64> = Vec::new();
    for k in 0..=rings {
        let r = r_in + (r_out - r_in) * k as f64 / rings as f64;
        let count = ((2.0 * PI * r * per_length).ceil() as usize).max(8);
        let ring: Vec<usize> = (nodes.len()..nodes.len() + count).collect();
        let angles: Vec<f64> = (0..count).map(|i| 2.0 * PI * i as f64 / count as f64).collect();
        for &a in &angles {
            nodes.push([T::lit(r * a.cos()), T::lit(r * a.sin())]);
            flags.push(k == 0 || k == rings);
        }
        if k > 0 {
            stitch_rings(&prev, &prev_angles, &ring, &angles, &mut tris);
        }
        prev = ring;
        prev_angles = angles;
    }
    DomainMesh::from_parts(nodes, tris, flags, Some(domain))
}

fn ear_clip(v: &[[f64; 2]]) -> Result<Vec<[usize; 3]>, MeshError> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    let mut tris = Vec::with_capacity(v.len() - 2);
    while idx.len() > 3 {
        let n = idx.len();
        let mut clipped = false;
        for k in 0..n {
            let (a, b, c) = (idx[(k + n - 1) % n], idx[k], idx[(k + 1) % n]);
            if orient(v[a], v[b], v[c]) <= 0.0 {
                continue;
            }
            let blocked = idx.iter().any(|&o| {
                o != a
                    && o != b
                    && o != c
                    && orient(v[a], v[b], v[o]) >= 0.0
                    && orient(v[b], v[c], v[o]) >= 0.0
                    && orient(v[c], v[a], v[o]) >= 0.0
            });
            if blocked {
                continue;
            }
            tris.push([a, b, c]);
            idx.remove(k);
            clipped = true;
            break;
        }
        if !clipped {
            return Err(MeshError::DegenerateDomain("ear clipping failed".into()));
        }
    }
    tris.push([idx[0], idx[1], idx[2]]);
    Ok(tris)
}

/// Uniform red refinement: every triangle is split into four.
///
/// Parent nodes keep their indices; midpoints are appended. Midpoints of
/// boundary edges on curved domains are projected onto the true boundary.
pub fn refine<T: Real>(mesh: &DomainMesh<T>) -> DomainMesh<T> {
    let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in mesh.triangles() {
        for a in 0..3 {
            let key = edge_key(tri[a], tri[(a + 1) % 3]);
            *edge_use.entry(key).or_insert(0) += 1;
        }
    }
    let mut nodes = mesh.nodes.clone();
    let mut flags = mesh.is_boundary.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let curved = mesh.domain().filter(|d| d.is_curved()).cloned();
    let mut tris = Vec::with_capacity(4 * mesh.triangle_count());
    let half = T::lit(0.5);
    for tri in mesh.triangles() {
        let mut mids = [0usize; 3];
        for a in 0..3 {
            let (i, j) = (tri[a], tri[(a + 1) % 3]);
            let key = edge_key(i, j);
            mids[a] = *midpoint.entry(key).or_insert_with(|| {
                let on_boundary = edge_use[&key] == 1;
                let mut p = [(nodes[i][0] + nodes[j][0]) * half, (nodes[i][1] + nodes[j][1]) * half];
                if on_boundary {
                    if let Some(d) = &curved {
                        let q = d.nearest_boundary_point([p[0].as_f64(), p[1].as_f64()]);
                        p = [T::lit(q[0]), T::lit(q[1])];
                    }
                }
                nodes.push(p);
                flags.push(on_boundary);
                nodes.len() - 1
            });
        }
        let [a, b, c] = *tri;
        let [ab, bc, ca] = mids;
        tris.push([a, ab, ca]);
        tris.push([ab, b, bc]);
        tris.push([ca, bc, c]);
        tris.push([ab, bc, ca]);
    }
    DomainMesh::from_parts(nodes, tris, flags, mesh.domain.clone()).expect("refinement of a valid mesh")
}

fn edge_key(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Bucket grid for point location in a mesh.
pub struct PointLocator<'a, T> {
    mesh: &'a DomainMesh<T>,
    lo: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl<'a, T: Real> PointLocator<'a, T> {
    fn new(mesh: &'a DomainMesh<T>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for i in 0..mesh.node_count() {
            let p = mesh.node_f64(i);
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let cell = mesh.h().as_f64().max(1e-300);
        let dims = [((hi[0] - lo[0]) / cell).floor() as usize + 1, ((hi[1] - lo[1]) / cell).floor() as usize + 1];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let pts: Vec<[f64; 2]> = tri.iter().map(|&k| mesh.node_f64(k)).collect();
            let bx0 = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let bx1 = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let by0 = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let by1 = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            let (i0, i1) = (Self::clampi((bx0 - lo[0]) / cell, dims[0]), Self::clampi((bx1 - lo[0]) / cell, dims[0]));
            let (j0, j1) = (Self::clampi((by0 - lo[1]) / cell, dims[1]), Self::clampi((by1 - lo[1]) / cell, dims[1]));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * dims[0] + i].push(t);
                }
            }
        }
        PointLocator { mesh, lo, cell, dims, buckets }
    }

    fn clampi(x: f64, n: usize) -> usize {
        (x.floor().max(0.0) as usize).min(n - 1)
    }

    /// Triangle containing `p` and the barycentric coordinates of `p` in it.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let i = ((p[0] - self.lo[0]) / self.cell).floor();
        let j = ((p[1] - self.lo[1]) / self.cell).floor();
        if i < -1.0 || j < -1.0 || i > self.dims[0] as f64 || j > self.dims[1] as f64 {
            return None;
        }
        let bi = Self::clampi(i, self.dims[0]);
        let bj = Self::clampi(j, self.dims[1]);
        let tol = -1e-10;
        for &t in &self.buckets[bj * self.dims[0] + bi] {
            let tri = self.mesh.triangles()[t];
            let [a, b, c] = [self.mesh.node_f64(tri[0]), self.mesh.node_f64(tri[1]), self.mesh.node_f64(tri[2])];
            let area = orient(a, b, c);
            let l0 = orient(p, b, c) / area;
            let l1 = orient(a, p, c) / area;
            let l2 = 1.0 - l0 - l1;
            if l0 >= tol && l1 >= tol && l2 >= tol {
                return Some((t, [l0, l1, l2]));
            }
        }
        None
    }

    /// Value of the P1 interpolant of `u` at `p`, or `None` outside the mesh.
    pub fn evaluate(&self, u: &NodalField<T>, p: [f64; 2]) -> Option<T> {
        let (t, l) = self.locate(p)?;
        let tri = self.mesh.triangles()[t];
        Some((0..3).fold(T::zero(), |acc, a| acc + u[tri[a]] * T::lit(l[a])))
    }
}
