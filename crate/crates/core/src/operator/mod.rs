//! The flux `A(x, q) = w(x) (q·Mq)^{(p-2)/2} Mq`, its weighted p-Dirichlet
//! energy and the discrete weak-form residual.
//!
//! The discrete energy is `Σ_t w(b_t) (∇u_t·M∇u_t)^{p/2} |t|` with `b_t` the
//! barycenter of triangle `t`. The residual at node `i` is
//! `Σ_t A(b_t, ∇u_t)·∇φ_i |t|`, so `∂E/∂u_i = p · residual_i`.

mod muckenhoupt;
mod structure;

pub use muckenhoupt::{check_ap_weight, power_ball_integral, ApReport};
pub use structure::{check_structure_conditions, StructureReport, Violation};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SymCsr;
use crate::mesh::{gradient_on, DomainMesh, MeshError, NodalField};
use crate::scalar::{pairwise_sum, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("invalid operator: {0}")]
    Invalid(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Weight `w(x)`, evaluated at element barycenters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightSpec<T> {
    Constant {
        c: T,
    },
    /// `|x|^gamma`.
    Power {
        gamma: T,
    },
    /// `c |x|^gamma`.
    Product {
        c: T,
        gamma: T,
    },
}

impl<T: Real> WeightSpec<T> {
    pub fn unit() -> Self {
        WeightSpec::Constant { c: T::one() }
    }

    pub fn eval(&self, x: [T; 2]) -> T {
        match *self {
            WeightSpec::Constant { c } => c,
            WeightSpec::Power { gamma } => x[0].hypot(x[1]).powf(gamma),
            WeightSpec::Product { c, gamma } => c * x[0].hypot(x[1]).powf(gamma),
        }
    }

    pub fn factor(&self) -> T {
        match *self {
            WeightSpec::Constant { c } | WeightSpec::Product { c, .. } => c,
            WeightSpec::Power { .. } => T::one(),
        }
    }

    pub fn exponent(&self) -> T {
        match *self {
            WeightSpec::Constant { .. } => T::zero(),
            WeightSpec::Power { gamma } | WeightSpec::Product { gamma, .. } => gamma,
        }
    }

    /// Same weight with every constant multiplied by `s`.
    pub fn scaled(&self, s: T) -> Self {
        match *self {
            WeightSpec::Constant { c } => WeightSpec::Constant { c: c * s },
            WeightSpec::Power { gamma } => WeightSpec::Product { c: s, gamma },
            WeightSpec::Product { c, gamma } => WeightSpec::Product { c: c * s, gamma },
        }
    }

    /// Whether `|x|^gamma` lies in the Muckenhoupt class `A_p` of the plane.
    pub fn in_ap_range(&self, p: T) -> bool {
        let g = self.exponent();
        g > -T::lit(2.0) && g < T::lit(2.0) * (p - T::one())
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        let c = self.factor();
        let g = self.exponent();
        if !(c.is_finite() && c > T::zero()) {
            return Err(OperatorError::Invalid(format!("weight constant must be positive, got {c}")));
        }
        if !(g.is_finite() && g > -T::lit(2.0)) {
            return Err(OperatorError::Invalid(format!(
                "power weight exponent must exceed -2 to be locally integrable, got {g}"
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> WeightSpec<U> {
        match *self {
            WeightSpec::Constant { c } => WeightSpec::Constant { c: U::lit(c.as_f64()) },
            WeightSpec::Power { gamma } => WeightSpec::Power { gamma: U::lit(gamma.as_f64()) },
            WeightSpec::Product { c, gamma } => {
                WeightSpec::Product { c: U::lit(c.as_f64()), gamma: U::lit(gamma.as_f64()) }
            }
        }
    }
}

/// Exponent, weight and (constant, symmetric positive-definite) anisotropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec<T> {
    pub p: T,
    pub weight: WeightSpec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anisotropy: Option<[[T; 2]; 2]>,
}

impl<T: Real> OperatorSpec<T> {
    pub fn new(p: T, weight: WeightSpec<T>) -> Result<Self, OperatorError> {
        let spec = OperatorSpec { p, weight, anisotropy: None };
        spec.validate()?;
        Ok(spec)
    }

    /// Unweighted p-Laplacian.
    pub fn p_laplacian(p: T) -> Result<Self, OperatorError> {
        Self::new(p, WeightSpec::unit())
    }

    pub fn with_anisotropy(mut self, m: [[T; 2]; 2]) -> Result<Self, OperatorError> {
        self.anisotropy = Some(m);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        if !(self.p.is_finite() && self.p > T::one()) {
            return Err(OperatorError::Invalid(format!("exponent must satisfy 1 < p < inf, got {}", self.p)));
        }
        self.weight.validate()?;
        if let Some(m) = self.anisotropy {
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(OperatorError::Invalid("non-finite anisotropy".into()));
            }
            let tol = T::lit(1e-12) * (m[0][1].abs() + m[1][0].abs() + T::one());
            if (m[0][1] - m[1][0]).abs() > tol {
                return Err(OperatorError::Invalid("anisotropy must be symmetric".into()));
            }
            let (lo, _) = self.eigen_bounds();
            if !(lo > T::zero()) {
                return Err(OperatorError::Invalid("anisotropy must be positive definite".into()));
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> [[T; 2]; 2] {
        self.anisotropy.unwrap_or([[T::one(), T::zero()], [T::zero(), T::one()]])
    }

    /// `(λ_min, λ_max)` of the anisotropy.
    pub fn eigen_bounds(&self) -> (T, T) {
        let m = self.matrix();
        let half = T::lit(0.5);
        let tr = (m[0][0] + m[1][1]) * half;
        let d = ((m[0][0] - m[1][1]) * half).hypot(m[0][1]);
        (tr - d, tr + d)
    }

    /// Coercivity constant: `A(x,q)·q ≥ α w(x) |q|^p`.
    pub fn alpha(&self) -> T {
        let (lo, _) = self.eigen_bounds();
        lo.powf(self.p / T::lit(2.0))
    }

    /// Growth constant: `|A(x,q)| ≤ β w(x) |q|^{p-1}`.
    pub fn beta(&self) -> T {
        let (lo, hi) = self.eigen_bounds();
        let two = T::lit(2.0);
        if self.p >= two {
            hi.powf(self.p / two)
        } else {
            hi * lo.powf((self.p - two) / two)
        }
    }

    pub fn weight_at(&self, x: [T; 2]) -> T {
        self.weight.eval(x)
    }

    /// `(q·Mq, Mq)`.
    #[inline]
    fn quadratic(&self, q: [T; 2]) -> (T, [T; 2]) {
        match self.anisotropy {
            None => (q[0] * q[0] + q[1] * q[1], q),
            Some(m) => {
                let mq = [m[0][0] * q[0] + m[0][1] * q[1], m[1][0] * q[0] + m[1][1] * q[1]];
                (q[0] * mq[0] + q[1] * mq[1], mq)
            }
        }
    }

    /// Flux without the weight factor.
    #[inline]
    pub(crate) fn unweighted_flux(&self, q: [T; 2]) -> [T; 2] {
        let (s, mq) = self.quadratic(q);
        if s == T::zero() {
            return [T::zero(); 2];
        }
        let f = s.powf((self.p - T::lit(2.0)) / T::lit(2.0));
        [f * mq[0], f * mq[1]]
    }

    /// Energy density `(q·Mq)^{p/2}` without the weight.
    #[inline]
    pub(crate) fn density(&self, q: [T; 2]) -> T {
        let (s, _) = self.quadratic(q);
        if s == T::zero() {
            return T::zero();
        }
        s.powf(self.p / T::lit(2.0))
    }

    /// Derivative of the unweighted flux with `q·Mq` regularised by `eps²`.
    #[inline]
    pub(crate) fn flux_jacobian(&self, q: [T; 2], eps: T) -> [[T; 2]; 2] {
        let (s, mq) = self.quadratic(q);
        let s = s + eps * eps;
        let two = T::lit(2.0);
        let a = s.powf((self.p - two) / two);
        let b = if self.p == two || (mq[0] == T::zero() && mq[1] == T::zero()) {
            T::zero()
        } else {
            (self.p - two) * s.powf((self.p - T::lit(4.0)) / two)
        };
        let m = self.matrix();
        [
            [a * m[0][0] + b * mq[0] * mq[0], a * m[0][1] + b * mq[0] * mq[1]],
            [a * m[1][0] + b * mq[1] * mq[0], a * m[1][1] + b * mq[1] * mq[1]],
        ]
    }

    pub fn cast<U: Real>(&self) -> OperatorSpec<U> {
        OperatorSpec {
            p: U::lit(self.p.as_f64()),
            weight: self.weight.cast(),
            anisotropy: self.anisotropy.map(|m| m.map(|r| r.map(|v| U::lit(v.as_f64())))),
        }
    }
}

/// A vector field `A(x, q)` of the class the solvers and checks operate on.
pub trait Flux<T: Real> {
    fn exponent(&self) -> T;
    fn weight_at(&self, x: [T; 2]) -> T;
    fn flux(&self, x: [T; 2], q: [T; 2]) -> [T; 2];
    /// Claimed coercivity constant.
    fn alpha(&self) -> T;
    /// Claimed growth constant.
    fn beta(&self) -> T;
}

impl<T: Real> Flux<T> for OperatorSpec<T> {
    fn exponent(&self) -> T {
        self.p
    }

    fn weight_at(&self, x: [T; 2]) -> T {
        OperatorSpec::weight_at(self, x)
    }

    fn flux(&self, x: [T; 2], q: [T; 2]) -> [T; 2] {
        let w = OperatorSpec::weight_at(self, x);
        let a = self.unweighted_flux(q);
        [w * a[0], w * a[1]]
    }

    fn alpha(&self) -> T {
        OperatorSpec::alpha(self)
    }

    fn beta(&self) -> T {
        OperatorSpec::beta(self)
    }
}

/// Evaluates `A(x, q)`.
pub fn a_flux<T: Real>(spec: &OperatorSpec<T>, x: [T; 2], q: [T; 2]) -> Result<[T; 2], OperatorError> {
    if !(q[0].is_finite() && q[1].is_finite()) {
        return Err(OperatorError::NonFinite(format!("gradient ({}, {})", q[0], q[1])));
    }
    Ok(Flux::flux(spec, x, q))
}

/// Weighted p-Dirichlet energy of `u`.
pub fn energy<T: Real>(mesh: &DomainMesh<T>, spec: &OperatorSpec<T>, u: &NodalField<T>) -> Result<T, OperatorError> {
    u.check_len(mesh.node_count())?;
    Ok(Assembler::new(mesh, spec).energy(u.as_slice()))
}

/// Discrete residual: interior entries of `∫ A(x,∇u)·∇φ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual<T> {
    /// One entry per node; boundary entries are zero.
    pub values: NodalField<T>,
    /// `true` at boundary nodes whose entries are not part of the residual.
    pub boundary: Vec<bool>,
}

impl<T: Real> Residual<T> {
    pub fn max_interior(&self) -> T {
        self.values.iter().zip(&self.boundary).filter(|(_, b)| !**b).fold(T::zero(), |m, (v, _)| m.max(v.abs()))
    }
}

pub fn residual<T: Real>(
    mesh: &DomainMesh<T>,
    spec: &OperatorSpec<T>,
    u: &NodalField<T>,
) -> Result<Residual<T>, OperatorError> {
    u.check_len(mesh.node_count())?;
    if !u.is_finite() {
        return Err(OperatorError::NonFinite("nodal field".into()));
    }
    let mut r = Assembler::new(mesh, spec).gradient(u.as_slice());
    for &b in mesh.boundary_nodes() {
        r[b] = T::zero();
    }
    Ok(Residual { values: NodalField::new(r), boundary: mesh.boundary_mask().to_vec() })
}

/// Element and nodal coefficients of a discrete energy on one mesh.
///
/// With `mass` enabled the energy gains the lumped zeroth-order term
/// `Σ_i m_i |u_i|^p`, `m_i = Σ_{t ∋ i} w(b_t)|t|/3`, which makes it the full
/// Sobolev functional `∫(|u|^p + |∇u|^p) w`.
pub(crate) struct Assembler<'a, T> {
    pub mesh: &'a DomainMesh<T>,
    pub spec: &'a OperatorSpec<T>,
    coeff: Vec<T>,
    mass: Option<Vec<T>>,
}

impl<'a, T: Real> Assembler<'a, T> {
    pub fn new(mesh: &'a DomainMesh<T>, spec: &'a OperatorSpec<T>) -> Self {
        let coeff = mesh.geometry().iter().map(|g| spec.weight_at(g.barycenter) * g.area).collect();
        Assembler { mesh, spec, coeff, mass: None }
    }

    pub fn with_mass(mut self) -> Self {
        let mut m = vec![T::zero(); self.mesh.node_count()];
        let third = T::one() / T::lit(3.0);
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            for &i in tri {
                m[i] += self.coeff[t] * third;
            }
        }
        self.mass = Some(m);
        self
    }

    pub fn p(&self) -> T {
        self.spec.p
    }

    pub fn energy(&self, u: &[T]) -> T {
        let geo = self.mesh.geometry();
        let terms: Vec<T> = self
            .mesh
            .triangles()
            .iter()
            .enumerate()
            .map(|(t, tri)| self.coeff[t] * self.spec.density(gradient_on(&geo[t], tri, u)))
            .collect();
        let mut e = pairwise_sum(&terms);
        if let Some(m) = &self.mass {
            let nodal: Vec<T> = m.iter().zip(u).map(|(&mi, &v)| mi * v.abs().powf(self.spec.p)).collect();
            e += pairwise_sum(&nodal);
        }
        e
    }

    /// `(1/p) ∂E/∂u` at every node, boundary nodes included.
    pub fn gradient(&self, u: &[T]) -> Vec<T> {
        let geo = self.mesh.geometry();
        let mut r = vec![T::zero(); u.len()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let g = &geo[t];
            let a = self.spec.unweighted_flux(gradient_on(g, tri, u));
            for k in 0..3 {
                r[tri[k]] += self.coeff[t] * (a[0] * g.grads[k][0] + a[1] * g.grads[k][1]);
            }
        }
        if let Some(m) = &self.mass {
            for (i, ri) in r.iter_mut().enumerate() {
                *ri += m[i] * signed_pow(u[i], self.spec.p - T::one());
            }
        }
        r
    }

    /// Entry `i` of [`Self::gradient`] from the incident triangles only.
    pub fn gradient_at(&self, u: &[T], i: usize) -> T {
        let geo = self.mesh.geometry();
        let mut r = T::zero();
        for &t in self.mesh.node_triangles(i) {
            let tri = &self.mesh.triangles()[t];
            let g = &geo[t];
            let k = tri.iter().position(|&n| n == i).expect("incident triangle");
            let a = self.spec.unweighted_flux(gradient_on(g, tri, u));
            r += self.coeff[t] * (a[0] * g.grads[k][0] + a[1] * g.grads[k][1]);
        }
        if let Some(m) = &self.mass {
            r += m[i] * signed_pow(u[i], self.spec.p - T::one());
        }
        r
    }

    /// Derivative of [`Self::gradient_at`] with respect to `u_i`, regularised.
    pub fn diagonal_at(&self, u: &[T], i: usize, eps: T) -> T {
        let geo = self.mesh.geometry();
        let mut d = T::zero();
        for &t in self.mesh.node_triangles(i) {
            let tri = &self.mesh.triangles()[t];
            let g = &geo[t];
            let k = tri.iter().position(|&n| n == i).expect("incident triangle");
            let j = self.spec.flux_jacobian(gradient_on(g, tri, u), eps);
            let gk = g.grads[k];
            d += self.coeff[t]
                * (gk[0] * (j[0][0] * gk[0] + j[0][1] * gk[1]) + gk[1] * (j[1][0] * gk[0] + j[1][1] * gk[1]));
        }
        if let Some(m) = &self.mass {
            d += m[i] * self.mass_curvature(u[i], eps);
        }
        d
    }

    fn mass_curvature(&self, v: T, eps: T) -> T {
        let two = T::lit(2.0);
        (self.spec.p - T::one()) * (v * v + eps * eps).powf((self.spec.p - two) / two)
    }

    /// Regularised Jacobian of [`Self::gradient`] restricted to the dofs in
    /// `dof_of` (`usize::MAX` marks fixed nodes), accumulated into `out`.
    pub fn jacobian_into(&self, u: &[T], eps: T, dof_of: &[usize], out: &mut SymCsr<T>) {
        out.clear();
        let geo = self.mesh.geometry();
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let g = &geo[t];
            let j = self.spec.flux_jacobian(gradient_on(g, tri, u), eps);
            for a in 0..3 {
                let da = dof_of[tri[a]];
                if da == usize::MAX {
                    continue;
                }
                let ja = [
                    j[0][0] * g.grads[a][0] + j[1][0] * g.grads[a][1],
                    j[0][1] * g.grads[a][0] + j[1][1] * g.grads[a][1],
                ];
                for b in 0..3 {
                    let db = dof_of[tri[b]];
                    if db == usize::MAX {
                        continue;
                    }
                    let v = self.coeff[t] * (ja[0] * g.grads[b][0] + ja[1] * g.grads[b][1]);
                    out.add(da, db, v);
                }
            }
        }
        if let Some(m) = &self.mass {
            for (i, &d) in dof_of.iter().enumerate() {
                if d != usize::MAX {
                    out.add(d, d, m[i] * self.mass_curvature(u[i], eps));
                }
            }
        }
    }
}

#[inline]
fn signed_pow<T: Real>(v: T, e: T) -> T {
    if v == T::zero() {
        T::zero()
    } else {
        v.signum() * v.abs().powf(e)
    }
}
