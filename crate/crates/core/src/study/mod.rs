//! Convergence studies along `(h, epsilon)` ladders.
//!
//! * E1 measures the sampled interface variables and both discrete normals.
//! * E2 solves with analytic interface variables.
//! * E3 solves with sampled variables and a discrete normal.

mod config;
mod report;

pub use config::{ConfigError, StudyConfig};
pub use report::{emit_report, fit_orders, OrderRow, CSV_HEADER};

use crate::fem::{FemError, KrylovMethod, SolverOptions};
use crate::geometry::{GeometryError, InterfaceProfile, TorusGeometry, Vec3};
use crate::helmholtz::{
    solve_problem, DiffuseProblemConfig, DiscreteGeometry, HelmholtzError, ManufacturedSolution, NormalSource,
    VariableSource,
};
use crate::mesh::vtk::{write_vtk, PointData};
use crate::mesh::{build_box_mesh, refine_to_band, BoxBounds, MeshError, RefineOptions, RefinementBand, TetMesh};
use crate::metrics::{e_di, normal_component_error, ErrorReport, InterfaceWeight, MetricsError};
use crate::sdf::{build_bvh, sample_nodal_fields, triangulate_torus, DistanceSource, TriangulationError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("relation p = {p}: {reason}")]
    InvalidRelation { p: u32, reason: String },
    #[error("empty ladder: h_min = {h_min}, h_max = {h_max}")]
    EmptyLadder { h_min: f64, h_max: f64 },
    #[error("no records to report")]
    NoRecords,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Helmholtz(#[from] HelmholtzError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Triangulation(#[from] TriangulationError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialisation failed: {0}")]
    Serialize(String),
}

impl StudyError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Experiment {
    E1,
    E2,
    E3,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::E1 => "E1",
            Self::E2 => "E2",
            Self::E3 => "E3",
        })
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(Self::E1),
            "E2" => Ok(Self::E2),
            "E3" => Ok(Self::E3),
            _ => Err(format!("unknown experiment '{s}'")),
        }
    }
}

/// Coupling `epsilon(h) = epsilon_0 (h / h_0)^(2 / p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub p: u32,
    pub anchor_h: f64,
    pub anchor_eps: f64,
}

impl RelationSpec {
    pub fn new(p: u32, anchor_h: f64, anchor_eps: f64) -> Result<Self, StudyError> {
        let invalid = |reason: String| Err(StudyError::InvalidRelation { p, reason });
        if !(2..=5).contains(&p) {
            return invalid("exponent must be one of 2, 3, 4, 5".into());
        }
        if !(anchor_h > 0.0 && anchor_h.is_finite() && anchor_eps > 0.0 && anchor_eps.is_finite()) {
            return invalid(format!("anchor ({anchor_h}, {anchor_eps}) must be positive"));
        }
        Ok(Self { p, anchor_h, anchor_eps })
    }

    /// `h = O(epsilon)`.
    pub fn is_linear(&self) -> bool {
        self.p == 2
    }

    /// Interface width on level `h`; fails unless `epsilon * kappa_max < 1`.
    pub fn epsilon_of(&self, h: f64, torus: &TorusGeometry) -> Result<f64, StudyError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(StudyError::InvalidRelation {
                p: self.p,
                reason: format!("mesh size {h} must be positive"),
            });
        }
        let eps = self.anchor_eps * (h / self.anchor_h).powf(2.0 / self.p as f64);
        InterfaceProfile::for_torus(eps, torus).map_err(|e| StudyError::InvalidRelation {
            p: self.p,
            reason: format!("h = {h}: {e}"),
        })?;
        Ok(eps)
    }
}

/// One run of one experiment on one ladder level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: Experiment,
    pub relation_p: u32,
    pub h: f64,
    pub epsilon: f64,
    /// Normal used in the solve; `None` for E1, which measures both discrete normals.
    pub normal_source: Option<NormalSource>,
    pub variable_source: VariableSource,
    pub errors: ErrorReport,
    pub dofs: usize,
    pub iterations: usize,
    pub seconds: f64,
}

/// Mesh sizes `h_max, h_max / 2, ...` down to `h_min`.
pub fn h_ladder(h_max: f64, h_min: f64) -> Result<Vec<f64>, StudyError> {
    if !(h_min > 0.0 && h_max >= h_min && h_max.is_finite()) {
        return Err(StudyError::EmptyLadder { h_min, h_max });
    }
    let mut h = h_max;
    let mut ladder = Vec::new();
    while h >= h_min * (1.0 - 1e-9) {
        ladder.push(h);
        h /= 2.0;
    }
    Ok(ladder)
}

/// Band-refined mesh of one ladder level.
pub struct Level {
    pub relation: RelationSpec,
    pub h: f64,
    pub epsilon: f64,
    pub profile: InterfaceProfile,
    pub mesh: TetMesh,
}

impl Level {
    pub fn build(cfg: &StudyConfig, relation: RelationSpec, h: f64) -> Result<Self, StudyError> {
        let torus = cfg.torus;
        let epsilon = relation.epsilon_of(h, &torus)?;
        let profile = InterfaceProfile::for_torus(epsilon, &torus)?;
        let band = RefinementBand::new(&torus, profile, h)?;
        let coarse = build_box_mesh(BoxBounds::cube(cfg.box_half_width), cfg.coarse_h)?;
        let mesh = refine_to_band(coarse, &band, RefineOptions::default())?;
        log::info!(
            "level p = {}, h = {h}, eps = {epsilon:.6}: {} vertices, {} cells",
            relation.p,
            mesh.num_vertices(),
            mesh.num_tets()
        );
        Ok(Self {
            relation,
            h,
            epsilon,
            profile,
            mesh,
        })
    }
}

/// Runs `experiments` on every valid `(p, h)` of the configured ladders. Levels
/// violating `epsilon * kappa_max < 1` are skipped with a log line.
pub fn run_study(cfg: &StudyConfig, experiments: &[Experiment]) -> Result<Vec<ExperimentRecord>, StudyError> {
    cfg.validate()?;
    let ladder = h_ladder(cfg.h_max, cfg.h_min)?;
    let mut records = Vec::new();
    for &p in &cfg.relations {
        let relation = RelationSpec::new(p, cfg.anchor_h, cfg.anchor_eps)?;
        for &h in &ladder {
            if let Err(e) = relation.epsilon_of(h, &cfg.torus) {
                log::warn!("skipping level: {e}");
                continue;
            }
            let level = Level::build(cfg, relation, h)?;
            for &experiment in experiments {
                records.extend(run_level(cfg, &level, experiment)?);
            }
        }
    }
    records.sort_by(|a, b| {
        (a.experiment, a.relation_p, a.normal_source.map(|n| n.to_string()))
            .cmp(&(b.experiment, b.relation_p, b.normal_source.map(|n| n.to_string())))
            .then(b.h.total_cmp(&a.h))
    });
    Ok(records)
}

pub fn run_experiment_e1(cfg: &StudyConfig) -> Result<Vec<ExperimentRecord>, StudyError> {
    run_study(cfg, &[Experiment::E1])
}

pub fn run_experiment_e2(cfg: &StudyConfig) -> Result<Vec<ExperimentRecord>, StudyError> {
    run_study(cfg, &[Experiment::E2])
}

pub fn run_experiment_e3(cfg: &StudyConfig) -> Result<Vec<ExperimentRecord>, StudyError> {
    run_study(cfg, &[Experiment::E3])
}

/// All records of `experiment` on one level: one for E1 and E2, one per normal source for E3.
pub fn run_level(cfg: &StudyConfig, level: &Level, experiment: Experiment) -> Result<Vec<ExperimentRecord>, StudyError> {
    match experiment {
        Experiment::E1 => Ok(vec![run_e1_level(cfg, level)?]),
        Experiment::E2 => Ok(vec![run_solve_level(cfg, level, NormalSource::Analytic, VariableSource::Analytic)?]),
        Experiment::E3 => cfg
            .normal_sources
            .iter()
            .map(|&normal| run_solve_level(cfg, level, normal, cfg.variable_source))
            .collect(),
    }
}

struct Sampler<'g> {
    torus: &'g TorusGeometry,
    surface: Option<crate::sdf::TriangleBvh>,
}

impl<'g> Sampler<'g> {
    fn new(torus: &'g TorusGeometry, source: VariableSource, h: f64) -> Result<Self, StudyError> {
        let surface = match source {
            VariableSource::SampledMesh => {
                // Surface resolution h_S = h / 4.
                let surface = triangulate_torus(torus, h / 4.0)?;
                log::info!("surface triangulation with {} triangles", surface.triangles().len());
                Some(build_bvh(&surface))
            }
            _ => None,
        };
        Ok(Self { torus, surface })
    }

    fn source(&self) -> &dyn DistanceSource {
        match &self.surface {
            Some(bvh) => bvh,
            None => self.torus,
        }
    }
}

fn problem_config(cfg: &StudyConfig, normal: NormalSource, variables: VariableSource) -> DiffuseProblemConfig {
    DiffuseProblemConfig {
        c_pen: cfg.c_pen,
        delta: cfg.delta,
        normal_source: normal,
        variable_source: variables,
        gradient_mode: cfg.gradient_mode,
        rhs_weight: cfg.rhs_weight,
        phase_eval: cfg.phase_eval,
        band_degree: cfg.band_degree,
        bulk_degree: cfg.bulk_degree,
        solver: SolverOptions {
            method: KrylovMethod::Cg,
            preconditioner: cfg.preconditioner,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
        },
    }
}

/// `E_DI(rho - rho_h)` and `E_DI(phi - phi_h)`, with `phi_h` evaluated as in the forms.
fn sampled_errors(geom: &DiscreteGeometry<'_>, weight: InterfaceWeight<'_>) -> Result<(f64, f64), StudyError> {
    let Some((rho_h, _)) = geom.fields() else {
        return Ok((0.0, 0.0));
    };
    let err_rho = e_di(geom.mesh(), geom.plan(), weight, |ctx| {
        let d = weight.torus.signed_distance(&ctx.x) - rho_h.eval_unchecked(ctx.tet, ctx.bary);
        Ok::<_, StudyError>(d * d)
    })?;
    let err_phi = e_di(geom.mesh(), geom.plan(), weight, |ctx| {
        let phi = weight.profile.phase_field(weight.torus.signed_distance(&ctx.x));
        let d = phi - geom.phi_at(ctx);
        Ok::<_, StudyError>(d * d)
    })?;
    Ok((err_rho, err_phi))
}

/// `E_DI(nu - nu_h)`; an undefined discrete normal counts as zero.
fn normal_error(geom: &DiscreteGeometry<'_>, weight: InterfaceWeight<'_>) -> Result<f64, StudyError> {
    e_di(geom.mesh(), geom.plan(), weight, |ctx| {
        let nu = weight.torus.normal(&ctx.x)?;
        let nu_h = geom.normal_at(ctx)?.unwrap_or_else(Vec3::zeros);
        Ok::<_, StudyError>((nu - nu_h).norm_squared())
    })
}

fn elapsed(cfg: &StudyConfig, start: Instant) -> f64 {
    if cfg.timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

fn run_e1_level(cfg: &StudyConfig, level: &Level) -> Result<ExperimentRecord, StudyError> {
    let start = Instant::now();
    let torus = cfg.torus;
    let variables = match cfg.variable_source {
        VariableSource::Analytic => VariableSource::SampledAnalytic,
        other => other,
    };
    let sampler = Sampler::new(&torus, variables, level.h)?;
    let (rho_h, phi_h) = sample_nodal_fields(sampler.source(), &level.mesh, &level.profile);
    let weight = InterfaceWeight {
        torus: &torus,
        profile: &level.profile,
    };
    let mut errors = ErrorReport::default();
    for normal in [NormalSource::A, NormalSource::B] {
        let problem = problem_config(cfg, normal, variables);
        let geom = DiscreteGeometry::from_config(
            &level.mesh,
            torus,
            level.profile,
            Some((rho_h.clone(), phi_h.clone())),
            &problem,
        )?;
        let err = normal_error(&geom, weight)?;
        if normal == NormalSource::A {
            let (err_rho, err_phi) = sampled_errors(&geom, weight)?;
            errors.err_rho = Some(err_rho);
            errors.err_phi = Some(err_phi);
            errors.err_nu_a = Some(err);
        } else {
            errors.err_nu_b = Some(err);
        }
    }
    if let Some(dir) = &cfg.vtk_dir {
        let name = format!("E1_p{}_h{}.vtk", level.relation.p, level.h);
        export_vtk(dir, &name, &level.mesh, &[PointData::Scalars("rho_h", rho_h.values()), PointData::Scalars("phi_h", phi_h.values())])?;
    }
    Ok(ExperimentRecord {
        experiment: Experiment::E1,
        relation_p: level.relation.p,
        h: level.h,
        epsilon: level.epsilon,
        normal_source: None,
        variable_source: variables,
        errors,
        dofs: level.mesh.num_vertices(),
        iterations: 0,
        seconds: elapsed(cfg, start),
    })
}

fn run_solve_level(
    cfg: &StudyConfig,
    level: &Level,
    normal: NormalSource,
    variables: VariableSource,
) -> Result<ExperimentRecord, StudyError> {
    let start = Instant::now();
    let torus = cfg.torus;
    let experiment = if variables == VariableSource::Analytic {
        Experiment::E2
    } else {
        Experiment::E3
    };
    let problem = problem_config(cfg, normal, variables);
    let sampled = match variables {
        VariableSource::Analytic => None,
        _ => {
            let sampler = Sampler::new(&torus, variables, level.h)?;
            Some(sample_nodal_fields(sampler.source(), &level.mesh, &level.profile))
        }
    };
    let geom = DiscreteGeometry::from_config(&level.mesh, torus, level.profile, sampled, &problem)?;
    let weight = InterfaceWeight {
        torus: &torus,
        profile: &level.profile,
    };
    let mut errors = ErrorReport::default();
    if geom.fields().is_some() {
        let (err_rho, err_phi) = sampled_errors(&geom, weight)?;
        errors.err_rho = Some(err_rho);
        errors.err_phi = Some(err_phi);
        let err_nu = normal_error(&geom, weight)?;
        match normal {
            NormalSource::A => errors.err_nu_a = Some(err_nu),
            NormalSource::B => errors.err_nu_b = Some(err_nu),
            NormalSource::Analytic => {}
        }
    }
    let solution = solve_problem(&geom, &ManufacturedSolution::new(torus), &problem, level.h)?;
    log::info!(
        "{experiment} p = {} h = {} normal {normal}: {} iterations, residual {:.3e}",
        level.relation.p,
        level.h,
        solution.stats.iterations,
        solution.stats.residual
    );
    let u_h = &solution.field;
    errors.err_u = Some(e_di(&level.mesh, geom.plan(), weight, |ctx| {
        let u = torus.exact_solution(&ctx.x)?;
        Ok::<_, StudyError>((u - u_h.eval_unchecked(ctx.tet, ctx.bary)).norm_squared())
    })?);
    errors.err_un = Some(normal_component_error(u_h, geom.plan(), weight)?);
    if let Some(dir) = &cfg.vtk_dir {
        let name = format!("{experiment}_{normal}_p{}_h{}.vtk", level.relation.p, level.h);
        let coefficients = u_h.to_interleaved();
        export_vtk(dir, &name, &level.mesh, &[PointData::Vectors("U_h", &coefficients)])?;
    }
    Ok(ExperimentRecord {
        experiment,
        relation_p: level.relation.p,
        h: level.h,
        epsilon: level.epsilon,
        normal_source: Some(normal),
        variable_source: variables,
        errors,
        dofs: solution.dofs,
        iterations: solution.stats.iterations,
        seconds: elapsed(cfg, start),
    })
}

fn export_vtk(dir: &Path, name: &str, mesh: &TetMesh, data: &[PointData<'_>]) -> Result<(), StudyError> {
    std::fs::create_dir_all(dir).map_err(|e| StudyError::io(format!("creating {}", dir.display()), e))?;
    let path: PathBuf = dir.join(name);
    let mut bytes = Vec::new();
    write_vtk(&mut bytes, mesh, name, data).map_err(|e| StudyError::io("encoding VTK", e))?;
    report::write_atomic(&path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus() -> TorusGeometry {
        TorusGeometry::benchmark()
    }

    #[test]
    fn relation_anchor_and_exact_powers() {
        for p in 2..=5 {
            let rel = RelationSpec::new(p, 0.25, 0.4).unwrap();
            assert_eq!(rel.epsilon_of(0.25, &torus()).unwrap(), 0.4);
        }
        let linear = RelationSpec::new(2, 0.25, 0.4).unwrap();
        assert!(linear.is_linear());
        assert!((linear.epsilon_of(0.125, &torus()).unwrap() - 0.2).abs() < 1e-15);
        let quintic = RelationSpec::new(5, 0.25, 0.4).unwrap();
        assert!((quintic.epsilon_of(0.25 / 32.0, &torus()).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn relation_rejects_wide_interfaces() {
        let rel = RelationSpec::new(2, 0.25, 0.4).unwrap();
        assert!(matches!(rel.epsilon_of(0.5, &torus()), Err(StudyError::InvalidRelation { .. })));
        assert!(rel.epsilon_of(-1.0, &torus()).is_err());
        assert!(RelationSpec::new(6, 0.25, 0.4).is_err());
        assert!(RelationSpec::new(3, 0.0, 0.4).is_err());
    }

    #[test]
    fn ladder_halves_down_to_h_min() {
        assert_eq!(h_ladder(0.25, 1.0 / 64.0).unwrap(), vec![0.25, 0.125, 0.0625, 0.03125, 0.015625]);
        assert_eq!(h_ladder(0.25, 0.25).unwrap(), vec![0.25]);
        assert!(h_ladder(0.1, 0.2).is_err());
    }

    #[test]
    fn invalid_levels_are_skipped() {
        let cfg = StudyConfig {
            relations: vec![2],
            h_max: 0.5,
            h_min: 0.25,
            normal_sources: vec![NormalSource::A],
            ..StudyConfig::default()
        };
        let records = run_study(&cfg, &[Experiment::E1]).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].h, 0.25);
    }

    #[test]
    fn coarse_level_produces_complete_records() {
        let cfg = StudyConfig {
            relations: vec![2],
            h_max: 0.25,
            h_min: 0.25,
            timing: false,
            ..StudyConfig::default()
        };
        let records = run_study(&cfg, &[Experiment::E1, Experiment::E2, Experiment::E3]).unwrap();
        let kinds: Vec<_> = records.iter().map(|r| (r.experiment, r.normal_source)).collect();
        assert_eq!(
            kinds,
            vec![
                (Experiment::E1, None),
                (Experiment::E2, Some(NormalSource::Analytic)),
                (Experiment::E3, Some(NormalSource::A)),
                (Experiment::E3, Some(NormalSource::B)),
            ]
        );
        let e1 = &records[0].errors;
        assert!(e1.err_rho.is_some() && e1.err_phi.is_some() && e1.err_nu_a.is_some() && e1.err_nu_b.is_some());
        assert!(e1.err_u.is_none());
        for r in &records[1..] {
            assert!(r.errors.err_u.unwrap().is_finite());
            assert!(r.errors.err_un.unwrap().is_finite());
            assert!(r.iterations > 0);
            assert_eq!(r.dofs, 3 * records[0].dofs);
            assert_eq!(r.seconds, 0.0);
        }
        assert!(records[1].errors.err_rho.is_none());
    }
}
