//! The penalised diffuse-interface vector Helmholtz problem
//! `H(U, Psi) + P(U, Psi) + R(U, Psi) = F(Psi)`.
//!
//! * `H = int W(phi_h) Pi_IJ (d_K U_I d_K Psi_J + U_I Psi_J)`
//! * `P = C_N int W(phi_h) (nu . U)(nu . Psi)` with `C_N = c_pen / h^2`
//! * `R = delta int d_K U_I d_K Psi_I`
//! * `F = int W(phi) (ext[grad u] : Pi grad Psi Pi + U . Pi Psi)` with analytic data.

use crate::fem::{
    assemble_matrix, assemble_vector, solve_krylov, FemError, KrylovMethod, PointCoefficients, PointContext, PointLoad,
    PointwiseKernel, Preconditioner, QuadraturePlan, ScalarField, SolveStats, SolverOptions, SparseSystem, VectorField,
};
use crate::fem::BlockCsr;
use crate::geometry::{GeometryError, InterfaceProfile, Mat3, TorusGeometry, Vec3};
use crate::mesh::TetMesh;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Recovered gradients below this length do not define a normal.
pub const NORMAL_GUARD: f64 = 1e-8;

/// Phase-field range treated as the interface when checking normals.
const BAND: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HelmholtzError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("discrete normal undefined inside the interface at ({x}, {y}, {z})")]
    UndefinedNormal { x: f64, y: f64, z: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fem(#[from] FemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormalSource {
    /// `nu = grad rho` of the torus.
    #[serde(rename = "analytic")]
    Analytic,
    /// `nu_h = grad rho_h`.
    A,
    /// `nu_h = -grad phi_h / |grad phi_h|`.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableSource {
    /// `rho`, `phi` evaluated exactly at quadrature points.
    Analytic,
    /// Nodal interpolants of the analytic distance.
    SampledAnalytic,
    /// Nodal distance to a triangulation of the torus.
    SampledMesh,
}

/// How discrete normals are evaluated from nodal fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Volume-averaged nodal gradients, normalised per node, interpolated and normalised again.
    Recovered,
    /// Per-cell gradient, normalised.
    Element,
}

/// Which phase field weights the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhsWeight {
    /// `W(phi)` of the analytic distance.
    Analytic,
    /// The same `W` as the bilinear forms.
    Discrete,
}

/// How `phi_h` is evaluated between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseEval {
    /// The tanh profile of the interpolated `rho_h`.
    Composed,
    /// Linear interpolation of the nodal `phi_h` values.
    Interpolated,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(format!("unknown value '{other}', expected one of: {}", [$($text),+].join(", "))),
                }
            }
        }
    };
}

text_enum!(NormalSource { NormalSource::Analytic => "analytic", NormalSource::A => "A", NormalSource::B => "B" });
text_enum!(VariableSource {
    VariableSource::Analytic => "analytic",
    VariableSource::SampledAnalytic => "sampled-analytic",
    VariableSource::SampledMesh => "sampled-mesh",
});
text_enum!(GradientMode { GradientMode::Recovered => "recovered", GradientMode::Element => "element" });
text_enum!(RhsWeight { RhsWeight::Analytic => "analytic", RhsWeight::Discrete => "discrete" });
text_enum!(PhaseEval { PhaseEval::Composed => "composed", PhaseEval::Interpolated => "interpolated" });

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffuseProblemConfig {
    /// Penalty constant, `C_N = c_pen / h^2`.
    pub c_pen: f64,
    /// Bulk regularisation.
    pub delta: f64,
    pub normal_source: NormalSource,
    pub variable_source: VariableSource,
    pub gradient_mode: GradientMode,
    pub rhs_weight: RhsWeight,
    pub phase_eval: PhaseEval,
    /// Quadrature exactness near the interface and elsewhere.
    pub band_degree: u32,
    pub bulk_degree: u32,
    pub solver: SolverOptions,
}

impl Default for DiffuseProblemConfig {
    fn default() -> Self {
        Self {
            c_pen: 10.0,
            delta: 1e-6,
            normal_source: NormalSource::Analytic,
            variable_source: VariableSource::Analytic,
            gradient_mode: GradientMode::Recovered,
            rhs_weight: RhsWeight::Analytic,
            phase_eval: PhaseEval::Composed,
            band_degree: 5,
            bulk_degree: 2,
            solver: SolverOptions {
                method: KrylovMethod::Cg,
                preconditioner: Preconditioner::None,
                tol: 1e-10,
                max_iter: 200_000,
            },
        }
    }
}

impl DiffuseProblemConfig {
    pub fn validate(&self) -> Result<(), HelmholtzError> {
        let bad = |msg: String| Err(HelmholtzError::InvalidConfig(msg));
        if !(self.c_pen > 0.0 && self.c_pen.is_finite()) {
            return bad(format!("c_pen = {} must be positive", self.c_pen));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta = {} must be positive", self.delta));
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return bad(format!("tolerance {} outside (0, 1)", self.solver.tol));
        }
        if self.variable_source == VariableSource::Analytic && self.normal_source != NormalSource::Analytic {
            return bad("discrete normals need sampled variables".into());
        }
        Ok(())
    }

    /// `C_N` for interface mesh size `h`.
    pub fn penalty(&self, h: f64) -> f64 {
        self.c_pen / (h * h)
    }
}

enum NormalRule<'m> {
    Analytic,
    Nodal(VectorField<'m>),
    Element(Vec<Vec3>),
}

/// Interface variables at one quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGeometry {
    pub phi: f64,
    pub weight: f64,
    /// Unit normal, or zero where it is undefined away from the interface.
    pub normal: Vec3,
}

impl PointGeometry {
    pub fn projector(&self) -> Mat3 {
        Mat3::identity() - self.normal * self.normal.transpose()
    }
}

/// `rho_h`, `phi_h` and the normal rule of one run, or the analytic variables.
pub struct DiscreteGeometry<'m> {
    mesh: &'m TetMesh,
    torus: TorusGeometry,
    profile: InterfaceProfile,
    fields: Option<(ScalarField<'m>, ScalarField<'m>)>,
    normals: NormalRule<'m>,
    normal_source: NormalSource,
    phase_eval: PhaseEval,
    plan: QuadraturePlan,
}

fn unit_or_zero(v: &Vec3) -> Vec3 {
    let n = v.norm();
    if n < NORMAL_GUARD {
        Vec3::zeros()
    } else {
        v / n
    }
}

impl<'m> DiscreteGeometry<'m> {
    /// Analytic `rho`, `phi` and `nu`.
    pub fn analytic(mesh: &'m TetMesh, torus: TorusGeometry, profile: InterfaceProfile, cfg: &DiffuseProblemConfig) -> Self {
        let rho: Vec<f64> = mesh.vertices().iter().map(|x| torus.signed_distance(x)).collect();
        Self {
            mesh,
            torus,
            profile,
            fields: None,
            normals: NormalRule::Analytic,
            normal_source: NormalSource::Analytic,
            phase_eval: cfg.phase_eval,
            plan: quadrature_plan(mesh, &rho, &profile, cfg),
        }
    }

    /// Sampled `rho_h`, `phi_h` with the configured normal source. With an
    /// analytic variable source the sampled fields are ignored.
    pub fn from_config(
        mesh: &'m TetMesh,
        torus: TorusGeometry,
        profile: InterfaceProfile,
        sampled: Option<(ScalarField<'m>, ScalarField<'m>)>,
        cfg: &DiffuseProblemConfig,
    ) -> Result<Self, HelmholtzError> {
        cfg.validate()?;
        if cfg.variable_source == VariableSource::Analytic {
            return Ok(Self::analytic(mesh, torus, profile, cfg));
        }
        let (rho, phi) = sampled.ok_or_else(|| {
            HelmholtzError::InvalidConfig(format!("variable source {} needs sampled fields", cfg.variable_source))
        })?;
        for field in [&rho, &phi] {
            if !std::ptr::eq(field.mesh(), mesh) {
                return Err(HelmholtzError::InvalidConfig("sampled fields live on a different mesh".into()));
            }
        }
        let plan = quadrature_plan(mesh, rho.values(), &profile, cfg);
        let source = match cfg.normal_source {
            NormalSource::Analytic => None,
            NormalSource::A => Some((&rho, 1.0)),
            NormalSource::B => Some((&phi, -1.0)),
        };
        let normals = match (source, cfg.gradient_mode) {
            (None, _) => NormalRule::Analytic,
            (Some((f, sign)), GradientMode::Recovered) => {
                NormalRule::Nodal(f.recover_gradient()?.map(|g| unit_or_zero(&(g * sign))))
            }
            (Some((f, sign)), GradientMode::Element) => NormalRule::Element(
                (0..mesh.num_tets())
                    .map(|t| f.element_gradient(t).map(|g| g * sign))
                    .collect::<Result<_, _>>()?,
            ),
        };
        Ok(Self {
            mesh,
            torus,
            profile,
            fields: Some((rho, phi)),
            normals,
            normal_source: cfg.normal_source,
            phase_eval: cfg.phase_eval,
            plan,
        })
    }

    pub fn mesh(&self) -> &'m TetMesh {
        self.mesh
    }

    pub fn torus(&self) -> &TorusGeometry {
        &self.torus
    }

    pub fn profile(&self) -> &InterfaceProfile {
        &self.profile
    }

    pub fn plan(&self) -> &QuadraturePlan {
        &self.plan
    }

    pub fn normal_source(&self) -> NormalSource {
        self.normal_source
    }

    pub fn fields(&self) -> Option<(&ScalarField<'m>, &ScalarField<'m>)> {
        self.fields.as_ref().map(|(r, p)| (r, p))
    }

    /// Phase field of the forms at a quadrature point.
    pub fn phi_at(&self, ctx: &PointContext<'_>) -> f64 {
        match (&self.fields, self.phase_eval) {
            (Some((rho, _)), PhaseEval::Composed) => self.profile.phase_field(rho.eval_unchecked(ctx.tet, ctx.bary)),
            (Some((_, phi)), PhaseEval::Interpolated) => phi.eval_unchecked(ctx.tet, ctx.bary),
            (None, _) => self.profile.phase_field(self.torus.signed_distance(&ctx.x)),
        }
    }

    /// Normal of the forms at a quadrature point, `None` where undefined.
    pub fn normal_at(&self, ctx: &PointContext<'_>) -> Result<Option<Vec3>, HelmholtzError> {
        let raw = match &self.normals {
            NormalRule::Analytic => return Ok(Some(self.torus.normal(&ctx.x)?)),
            NormalRule::Nodal(field) => field.eval_unchecked(ctx.tet, ctx.bary),
            NormalRule::Element(grads) => grads[ctx.tet],
        };
        let len = raw.norm();
        Ok((len >= NORMAL_GUARD).then(|| raw / len))
    }

    pub fn at(&self, ctx: &PointContext<'_>) -> Result<PointGeometry, HelmholtzError> {
        let phi = self.phi_at(ctx);
        let weight = self.profile.well_potential(phi);
        let normal = match self.normal_at(ctx)? {
            Some(n) => n,
            None if (BAND.0..=BAND.1).contains(&phi) => {
                return Err(HelmholtzError::UndefinedNormal {
                    x: ctx.x.x,
                    y: ctx.x.y,
                    z: ctx.x.z,
                })
            }
            None => Vec3::zeros(),
        };
        Ok(PointGeometry { phi, weight, normal })
    }
}

fn quadrature_plan(mesh: &TetMesh, rho: &[f64], profile: &InterfaceProfile, cfg: &DiffuseProblemConfig) -> QuadraturePlan {
    QuadraturePlan::near_interface(mesh, rho, 3.0 * profile.epsilon(), cfg.band_degree, cfg.bulk_degree)
}

/// Pointwise coefficients of `H`.
pub fn helmholtz_point(g: &PointGeometry) -> PointCoefficients {
    let wp = g.projector() * g.weight;
    PointCoefficients {
        stiffness: wp,
        mass: wp,
    }
}

/// Pointwise coefficients of `P` for penalty `c_n`.
pub fn penalty_point(g: &PointGeometry, c_n: f64) -> PointCoefficients {
    PointCoefficients {
        stiffness: Mat3::zeros(),
        mass: g.normal * g.normal.transpose() * (c_n * g.weight),
    }
}

/// Pointwise coefficients of `R`.
pub fn regularization_point(delta: f64) -> PointCoefficients {
    PointCoefficients {
        stiffness: Mat3::identity() * delta,
        mass: Mat3::zeros(),
    }
}

pub fn assemble_helmholtz(geom: &DiscreteGeometry<'_>) -> Result<BlockCsr, HelmholtzError> {
    let kernel = PointwiseKernel::new(geom.mesh, &geom.plan, |ctx: &PointContext<'_>| {
        Ok::<_, HelmholtzError>(helmholtz_point(&geom.at(ctx)?))
    });
    assemble_matrix(geom.mesh, &kernel)
}

pub fn assemble_penalty(geom: &DiscreteGeometry<'_>, cfg: &DiffuseProblemConfig, h: f64) -> Result<BlockCsr, HelmholtzError> {
    let c_n = cfg.penalty(h);
    let kernel = PointwiseKernel::new(geom.mesh, &geom.plan, |ctx: &PointContext<'_>| {
        Ok::<_, HelmholtzError>(penalty_point(&geom.at(ctx)?, c_n))
    });
    assemble_matrix(geom.mesh, &kernel)
}

pub fn assemble_regularization(mesh: &TetMesh, cfg: &DiffuseProblemConfig) -> Result<BlockCsr, HelmholtzError> {
    let plan = QuadraturePlan::uniform(mesh, crate::fem::QuadratureRule::centroid());
    let coefficients = regularization_point(cfg.delta);
    let kernel = PointwiseKernel::new(mesh, &plan, |_: &PointContext<'_>| Ok::<_, HelmholtzError>(coefficients));
    assemble_matrix(mesh, &kernel)
}

/// `H + P + R` in one element pass.
pub fn assemble_system_matrix(geom: &DiscreteGeometry<'_>, cfg: &DiffuseProblemConfig, h: f64) -> Result<BlockCsr, HelmholtzError> {
    let c_n = cfg.penalty(h);
    let reg = regularization_point(cfg.delta);
    let kernel = PointwiseKernel::new(geom.mesh, &geom.plan, |ctx: &PointContext<'_>| {
        let g = geom.at(ctx)?;
        Ok::<_, HelmholtzError>(helmholtz_point(&g) + penalty_point(&g, c_n) + reg)
    });
    assemble_matrix(geom.mesh, &kernel)
}

/// The manufactured field scaled by `amplitude`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub torus: TorusGeometry,
    pub amplitude: f64,
}

impl ManufacturedSolution {
    pub fn new(torus: TorusGeometry) -> Self {
        Self { torus, amplitude: 1.0 }
    }

    pub fn value(&self, x: &Vec3) -> Result<Vec3, GeometryError> {
        Ok(self.torus.exact_solution(x)? * self.amplitude)
    }

    pub fn ext_grad(&self, x: &Vec3) -> Result<Mat3, GeometryError> {
        Ok(self.torus.ext_grad_solution(x)? * self.amplitude)
    }
}

/// Load vector `F(Psi)` with analytic `Pi`, analytic data and the configured weight.
pub fn assemble_rhs(
    geom: &DiscreteGeometry<'_>,
    solution: &ManufacturedSolution,
    cfg: &DiffuseProblemConfig,
) -> Result<Vec<f64>, HelmholtzError> {
    let kernel = PointwiseKernel::new(geom.mesh, &geom.plan, |ctx: &PointContext<'_>| {
        let weight = match cfg.rhs_weight {
            RhsWeight::Analytic => geom.profile.weight(geom.torus.signed_distance(&ctx.x)),
            RhsWeight::Discrete => geom.profile.well_potential(geom.phi_at(ctx)),
        };
        if weight == 0.0 {
            return Ok(PointLoad {
                value: Vec3::zeros(),
                flux: Mat3::zeros(),
            });
        }
        let nu = geom.torus.normal(&ctx.x)?;
        let pi = Mat3::identity() - nu * nu.transpose();
        // ext[grad u] is already doubly projected, so ext[grad u] : Pi grad(Psi) Pi = ext[grad u] : grad(Psi).
        let grad = solution.ext_grad(&ctx.x)?;
        Ok::<_, HelmholtzError>(PointLoad {
            value: pi * solution.value(&ctx.x)? * weight,
            flux: grad * weight,
        })
    });
    assemble_vector(geom.mesh, &kernel)
}

pub fn assemble_system(
    geom: &DiscreteGeometry<'_>,
    solution: &ManufacturedSolution,
    cfg: &DiffuseProblemConfig,
    h: f64,
) -> Result<SparseSystem, HelmholtzError> {
    let matrix = assemble_system_matrix(geom, cfg, h)?;
    let rhs = assemble_rhs(geom, solution, cfg)?;
    Ok(SparseSystem::new(matrix, rhs)?)
}

pub struct DiscreteSolution<'m> {
    pub field: VectorField<'m>,
    pub stats: SolveStats,
    pub dofs: usize,
}

/// Assembles and solves the system for interface mesh size `h`.
pub fn solve_problem<'m>(
    geom: &DiscreteGeometry<'m>,
    solution: &ManufacturedSolution,
    cfg: &DiffuseProblemConfig,
    h: f64,
) -> Result<DiscreteSolution<'m>, HelmholtzError> {
    cfg.validate()?;
    let system = assemble_system(geom, solution, cfg, h)?;
    log::info!(
        "solving {} unknowns ({} blocks) with {:?}",
        system.matrix.dim(),
        system.matrix.num_blocks(),
        cfg.solver.method
    );
    let (x, stats) = solve_krylov(&system.matrix, &system.rhs, None, &cfg.solver)?;
    Ok(DiscreteSolution {
        field: VectorField::from_interleaved(geom.mesh, &x)?,
        stats,
        dofs: x.len(),
    })
}
