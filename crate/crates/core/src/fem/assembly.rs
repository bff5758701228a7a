//! Element loops producing block matrices and load vectors.
//!
//! Element contributions are computed in parallel per chunk and scattered in
//! cell order, so the result does not depend on the thread count.

use super::field::{element_geometry, ElementGeometry};
use super::quadrature::QuadratureRule;
use super::sparse::{Block, BlockCsr};
use super::FemError;
use crate::geometry::{Mat3, Vec3};
use crate::mesh::TetMesh;
use rayon::prelude::*;

const CHUNK: usize = 4096;

/// Quadrature rule per cell: a high-order rule near the interface, a cheap
/// one elsewhere.
#[derive(Debug, Clone)]
pub struct QuadraturePlan {
    band_rule: QuadratureRule,
    bulk_rule: QuadratureRule,
    high: Vec<bool>,
}

impl QuadraturePlan {
    /// Same rule on every cell.
    pub fn uniform(mesh: &TetMesh, rule: QuadratureRule) -> Self {
        Self {
            bulk_rule: rule.clone(),
            band_rule: rule,
            high: vec![false; mesh.num_tets()],
        }
    }

    /// Uses `band_degree` on cells whose vertex distances change sign or come
    /// within `reach` of zero (after subtracting the cell diameter), `bulk_degree` elsewhere.
    pub fn near_interface(mesh: &TetMesh, vertex_rho: &[f64], reach: f64, band_degree: u32, bulk_degree: u32) -> Self {
        let high = (0..mesh.num_tets())
            .into_par_iter()
            .map(|t| {
                let r = mesh.tets()[t].map(|v| vertex_rho[v as usize]);
                let min = r.iter().copied().fold(f64::INFINITY, f64::min);
                let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if min <= 0.0 && max >= 0.0 {
                    return true;
                }
                let closest = r.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
                closest - mesh.diameter(t) <= reach
            })
            .collect();
        Self {
            band_rule: QuadratureRule::of_degree(band_degree),
            bulk_rule: QuadratureRule::of_degree(bulk_degree),
            high,
        }
    }

    pub fn rule(&self, t: usize) -> &QuadratureRule {
        if self.high[t] {
            &self.band_rule
        } else {
            &self.bulk_rule
        }
    }

    pub fn is_high(&self, t: usize) -> bool {
        self.high[t]
    }

    pub fn num_high(&self) -> usize {
        self.high.iter().filter(|&&h| h).count()
    }
}

/// Data available to a pointwise integrand.
#[derive(Debug, Clone, Copy)]
pub struct PointContext<'a> {
    pub tet: usize,
    pub bary: &'a [f64; 4],
    pub x: Vec3,
}

/// Pointwise bilinear coefficients: the `(a, b)` block receives
/// `stiffness * (grad l_a . grad l_b) + mass * l_a l_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCoefficients {
    pub stiffness: Mat3,
    pub mass: Mat3,
}

impl PointCoefficients {
    pub fn zero() -> Self {
        Self {
            stiffness: Mat3::zeros(),
            mass: Mat3::zeros(),
        }
    }
}

impl std::ops::Add for PointCoefficients {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            stiffness: self.stiffness + rhs.stiffness,
            mass: self.mass + rhs.mass,
        }
    }
}

/// Pointwise load: vertex `a` receives `value * l_a + flux * grad l_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLoad {
    pub value: Vec3,
    pub flux: Mat3,
}

/// Element-level integrator.
pub trait ElementKernel: Sync {
    type Error: From<FemError> + Send;

    /// Adds the cell matrix; `out[4 * a + b]` couples test vertex `a` with trial vertex `b`.
    fn element_matrix(&self, t: usize, geo: &ElementGeometry, out: &mut [Block; 16]) -> Result<(), Self::Error>;
}

/// Element-level load integrator.
pub trait LoadKernel: Sync {
    type Error: From<FemError> + Send;

    fn element_vector(&self, t: usize, geo: &ElementGeometry, out: &mut [[f64; 3]; 4]) -> Result<(), Self::Error>;
}

/// Adapts a pointwise integrand to [`ElementKernel`] or [`LoadKernel`] by quadrature.
pub struct PointwiseKernel<'p, F> {
    mesh: &'p TetMesh,
    plan: &'p QuadraturePlan,
    integrand: F,
}

impl<'p, F> PointwiseKernel<'p, F> {
    pub fn new(mesh: &'p TetMesh, plan: &'p QuadraturePlan, integrand: F) -> Self {
        Self { mesh, plan, integrand }
    }
}

impl<F, E> ElementKernel for PointwiseKernel<'_, F>
where
    F: Fn(&PointContext<'_>) -> Result<PointCoefficients, E> + Sync,
    E: From<FemError> + Send,
{
    type Error = E;

    fn element_matrix(&self, t: usize, geo: &ElementGeometry, out: &mut [Block; 16]) -> Result<(), E> {
        let x = self.mesh.tet_vertices(t);
        let mut gdot = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                gdot[a][b] = geo.grads[a].dot(&geo.grads[b]);
            }
        }
        for (bary, w) in self.plan.rule(t).iter() {
            let ctx = PointContext {
                tet: t,
                bary,
                x: ElementGeometry::point(&x, bary),
            };
            let c = (self.integrand)(&ctx)?;
            let w = w * geo.volume;
            for a in 0..4 {
                for b in 0..4 {
                    let (g, m) = (w * gdot[a][b], w * bary[a] * bary[b]);
                    let block = &mut out[4 * a + b];
                    for r in 0..3 {
                        for col in 0..3 {
                            block[3 * r + col] += g * c.stiffness[(r, col)] + m * c.mass[(r, col)];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl<F, E> LoadKernel for PointwiseKernel<'_, F>
where
    F: Fn(&PointContext<'_>) -> Result<PointLoad, E> + Sync,
    E: From<FemError> + Send,
{
    type Error = E;

    fn element_vector(&self, t: usize, geo: &ElementGeometry, out: &mut [[f64; 3]; 4]) -> Result<(), E> {
        let x = self.mesh.tet_vertices(t);
        for (bary, w) in self.plan.rule(t).iter() {
            let ctx = PointContext {
                tet: t,
                bary,
                x: ElementGeometry::point(&x, bary),
            };
            let load = (self.integrand)(&ctx)?;
            let w = w * geo.volume;
            for a in 0..4 {
                let contribution = load.value * bary[a] + load.flux * geo.grads[a];
                for r in 0..3 {
                    out[a][r] += w * contribution[r];
                }
            }
        }
        Ok(())
    }
}

/// Assembles into a fresh matrix with the mesh adjacency pattern.
pub fn assemble_matrix<K: ElementKernel>(mesh: &TetMesh, kernel: &K) -> Result<BlockCsr, K::Error> {
    let mut matrix = BlockCsr::from_mesh(mesh);
    assemble_into(mesh, kernel, &mut matrix)?;
    Ok(matrix)
}

/// Adds the kernel's contributions to an existing matrix with the mesh pattern.
pub fn assemble_into<K: ElementKernel>(mesh: &TetMesh, kernel: &K, matrix: &mut BlockCsr) -> Result<(), K::Error> {
    if matrix.block_rows() != mesh.num_vertices() {
        return Err(FemError::DimensionMismatch {
            expected: mesh.num_vertices(),
            actual: matrix.block_rows(),
        }
        .into());
    }
    let mut buffer: Vec<[Block; 16]> = Vec::with_capacity(CHUNK);
    for start in (0..mesh.num_tets()).step_by(CHUNK) {
        let end = (start + CHUNK).min(mesh.num_tets());
        buffer.clear();
        (start..end)
            .into_par_iter()
            .map(|t| -> Result<_, K::Error> {
                let geo = element_geometry(mesh, t)?;
                let mut out = [[0.0; 9]; 16];
                kernel.element_matrix(t, &geo, &mut out)?;
                Ok(out)
            })
            .collect_into_vec_result(&mut buffer)?;
        for (t, local) in (start..end).zip(&buffer) {
            let tet = mesh.tets()[t];
            for a in 0..4 {
                for b in 0..4 {
                    let p = matrix
                        .position(tet[a] as usize, tet[b] as usize)
                        .expect("mesh pattern contains every cell pair");
                    let block = &mut matrix.blocks_mut()[p];
                    for (x, y) in block.iter_mut().zip(&local[4 * a + b]) {
                        *x += y;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Assembles an interleaved load vector of length `3 * vertices`.
pub fn assemble_vector<K: LoadKernel>(mesh: &TetMesh, kernel: &K) -> Result<Vec<f64>, K::Error> {
    let mut rhs = vec![0.0; 3 * mesh.num_vertices()];
    let mut buffer: Vec<[[f64; 3]; 4]> = Vec::with_capacity(CHUNK);
    for start in (0..mesh.num_tets()).step_by(CHUNK) {
        let end = (start + CHUNK).min(mesh.num_tets());
        buffer.clear();
        (start..end)
            .into_par_iter()
            .map(|t| -> Result<_, K::Error> {
                let geo = element_geometry(mesh, t)?;
                let mut out = [[0.0; 3]; 4];
                kernel.element_vector(t, &geo, &mut out)?;
                Ok(out)
            })
            .collect_into_vec_result(&mut buffer)?;
        for (t, local) in (start..end).zip(&buffer) {
            for (a, &v) in mesh.tets()[t].iter().enumerate() {
                for r in 0..3 {
                    rhs[3 * v as usize + r] += local[a][r];
                }
            }
        }
    }
    Ok(rhs)
}

trait CollectResult<T, E> {
    fn collect_into_vec_result(self, out: &mut Vec<T>) -> Result<(), E>;
}

impl<I, T, E> CollectResult<T, E> for I
where
    I: IndexedParallelIterator<Item = Result<T, E>>,
    T: Send,
    E: Send,
{
    fn collect_into_vec_result(self, out: &mut Vec<T>) -> Result<(), E> {
        let results: Vec<Result<T, E>> = self.collect();
        for r in results {
            out.push(r?);
        }
        Ok(())
    }
}
