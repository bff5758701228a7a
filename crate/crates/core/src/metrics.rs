//! Weighted interface errors and convergence-rate fits.

use crate::fem::{ElementGeometry, FemError, PointContext, QuadraturePlan, VectorField};
use crate::geometry::{GeometryError, InterfaceProfile, TorusGeometry};
use crate::mesh::TetMesh;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("need at least {needed} points for a rate fit, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("rate fits need positive finite values, got scale {scale} and error {error}")]
    NonPositive { scale: f64, error: f64 },
    #[error("scale and error series differ in length")]
    LengthMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Interface-weighted errors of one run; `None` where a quantity was not computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub err_rho: Option<f64>,
    pub err_phi: Option<f64>,
    pub err_nu_a: Option<f64>,
    pub err_nu_b: Option<f64>,
    pub err_u: Option<f64>,
    pub err_un: Option<f64>,
}

impl ErrorReport {
    /// `(column name, value)` pairs in report order.
    pub fn entries(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("err_rho", self.err_rho),
            ("err_phi", self.err_phi),
            ("err_nu_A", self.err_nu_a),
            ("err_nu_B", self.err_nu_b),
            ("err_u", self.err_u),
            ("err_un", self.err_un),
        ]
    }
}

/// Integrand of an interface-weighted norm: `W(phi(rho(x))) * density(x)`,
/// with the analytic phase field in the weight.
#[derive(Debug, Clone, Copy)]
pub struct InterfaceWeight<'a> {
    pub torus: &'a TorusGeometry,
    pub profile: &'a InterfaceProfile,
}

impl InterfaceWeight<'_> {
    /// `int W(phi) * density dV`. The density is only evaluated where the weight is nonzero.
    pub fn integrate<F, E>(&self, mesh: &TetMesh, plan: &QuadraturePlan, density: F) -> Result<f64, E>
    where
        F: Fn(&PointContext<'_>) -> Result<f64, E> + Sync,
        E: From<FemError> + Send,
    {
        const CHUNK: usize = 4096;
        let partial: Vec<Result<f64, E>> = (0..mesh.num_tets().div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let mut sum = 0.0;
                for t in chunk * CHUNK..((chunk + 1) * CHUNK).min(mesh.num_tets()) {
                    let x = mesh.tet_vertices(t);
                    let volume = mesh.volume(t);
                    let mut cell = 0.0;
                    for (bary, w) in plan.rule(t).iter() {
                        let p = ElementGeometry::point(&x, bary);
                        let weight = self.profile.weight(self.torus.signed_distance(&p));
                        if weight == 0.0 {
                            continue;
                        }
                        let ctx = PointContext { tet: t, bary, x: p };
                        cell += w * weight * density(&ctx)?;
                    }
                    sum += volume * cell;
                }
                Ok(sum)
            })
            .collect();
        let mut total = 0.0;
        for p in partial {
            total += p?;
        }
        Ok(total)
    }

    /// `int W(phi) dV`, close to the surface area for thin interfaces.
    pub fn total(&self, mesh: &TetMesh, plan: &QuadraturePlan) -> f64 {
        self.integrate::<_, FemError>(mesh, plan, |_| Ok(1.0))
            .expect("constant density cannot fail")
    }
}

/// `E_DI = (int W(phi) |difference|^2 dV)^(1/2)`; the closure returns `|difference|^2`.
pub fn e_di<F, E>(mesh: &TetMesh, plan: &QuadraturePlan, weight: InterfaceWeight<'_>, squared: F) -> Result<f64, E>
where
    F: Fn(&PointContext<'_>) -> Result<f64, E> + Sync,
    E: From<FemError> + Send,
{
    Ok(weight.integrate(mesh, plan, squared)?.max(0.0).sqrt())
}

/// `E_DI(U_h . nu)` with the analytic normal.
pub fn normal_component_error(
    field: &VectorField<'_>,
    plan: &QuadraturePlan,
    weight: InterfaceWeight<'_>,
) -> Result<f64, MetricsError> {
    e_di(field.mesh(), plan, weight, |ctx| {
        let nu = weight.torus.normal(&ctx.x)?;
        let un = field.eval_unchecked(ctx.tet, ctx.bary).dot(&nu);
        Ok::<_, MetricsError>(un * un)
    })
}

/// Least-squares fit of `log(error)` against `log(scale)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    /// `error[k + 1] / error[k]`.
    pub ratios: Vec<f64>,
    /// Order between consecutive points, `log(e1/e0) / log(s1/s0)`.
    pub pairwise: Vec<f64>,
}

pub fn observed_order(scales: &[f64], errors: &[f64]) -> Result<OrderFit, MetricsError> {
    if scales.len() != errors.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if scales.len() < 3 {
        return Err(MetricsError::TooFewPoints {
            needed: 3,
            got: scales.len(),
        });
    }
    for (&scale, &error) in scales.iter().zip(errors) {
        if !(scale > 0.0 && error > 0.0 && scale.is_finite() && error.is_finite()) {
            return Err(MetricsError::NonPositive { scale, error });
        }
    }
    let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(OrderFit {
        slope,
        intercept: my - slope * mx,
        ratios: errors.windows(2).map(|w| w[1] / w[0]).collect(),
        pairwise: xs
            .windows(2)
            .zip(ys.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect(),
    })
}
