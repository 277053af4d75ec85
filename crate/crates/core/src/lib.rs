//! Weighted p-Laplacian solvers on triangle meshes: Dirichlet and obstacle
//! problems, Sobolev capacities, and approximants of Perron solutions for
//! boundary data perturbed on small sets.
//!
//! Every numerical type is generic over [`scalar::Real`]; the aliases below
//! fix it to `f64`.

// `!(a > b)` deliberately treats NaN as a failed check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod dirichlet;
pub mod functions;
pub mod linalg;
pub mod mesh;
pub mod obstacle;
pub mod operator;
pub mod oracle;
pub mod perron;
pub mod scalar;
pub mod solver;

pub type Mesh = mesh::DomainMesh<f64>;
pub type Field = mesh::NodalField<f64>;
pub type Operator = operator::OperatorSpec<f64>;
