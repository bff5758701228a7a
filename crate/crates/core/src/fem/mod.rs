//! Linear Lagrange elements on tetrahedral meshes.

pub mod assembly;
mod field;
pub mod quadrature;
pub mod solver;
pub mod sparse;

pub use assembly::{
    assemble_into, assemble_matrix, assemble_vector, ElementKernel, LoadKernel, PointCoefficients, PointContext,
    PointLoad, PointwiseKernel, QuadraturePlan,
};
pub use field::{element_geometry, ElementGeometry, ScalarField, VectorField};
pub use quadrature::QuadratureRule;
pub use solver::{solve_krylov, KrylovMethod, Preconditioner, SolveStats, SolverOptions};
pub use sparse::{write_vector_market, BlockCsr, SparseSystem};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FemError {
    #[error("barycentric coordinates {0:?} do not form a partition of unity")]
    InvalidBarycentric([f64; 4]),
    #[error("tetrahedron {0} is degenerate")]
    DegenerateTet(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("field value at vertex {0} is not finite")]
    NonFinite(usize),
    #[error("{method} did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("{method} broke down at iteration {iteration}")]
    Breakdown { method: &'static str, iteration: usize },
}
