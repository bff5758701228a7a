//! Diffuse-interface finite elements for tangential vector fields on a torus.
//!
//! The crate builds interface-adapted tetrahedral meshes of `[-2, 2]^3`,
//! samples the implicit geometry, assembles the penalised vector Helmholtz
//! system and measures interface-weighted errors along refinement ladders.

pub mod fem;
pub mod geometry;
pub mod helmholtz;
pub mod mesh;
pub mod metrics;
pub mod sdf;
pub mod study;

pub use fem::{FemError, ScalarField, VectorField};
pub use geometry::{GeometryError, InterfaceProfile, Mat3, TorusGeometry, Vec3};
pub use mesh::{build_box_mesh, BoxBounds, MeshError, TetMesh};
pub use metrics::{observed_order, ErrorReport, MetricsError};
pub use helmholtz::{DiffuseProblemConfig, DiscreteGeometry, HelmholtzError, NormalSource, VariableSource};
pub use study::{emit_report, run_study, Experiment, ExperimentRecord, RelationSpec, StudyConfig, StudyError};
