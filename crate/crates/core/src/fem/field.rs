use super::FemError;
use crate::geometry::{Mat3, Vec3};
use crate::mesh::TetMesh;
use rayon::prelude::*;

/// Volume and barycentric-coordinate gradients of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub volume: f64,
    pub grads: [Vec3; 4],
}

impl ElementGeometry {
    /// Physical point of barycentric coordinates `bary` given the cell vertices.
    pub fn point(x: &[Vec3; 4], bary: &[f64; 4]) -> Vec3 {
        x[0] * bary[0] + x[1] * bary[1] + x[2] * bary[2] + x[3] * bary[3]
    }
}

pub fn element_geometry(mesh: &TetMesh, t: usize) -> Result<ElementGeometry, FemError> {
    let [a, b, c, d] = mesh.tet_vertices(t);
    let jac = Mat3::from_columns(&[b - a, c - a, d - a]);
    let det = jac.determinant();
    let scale = (b - a).norm() * (c - a).norm() * (d - a).norm();
    if !(det.abs() > 1e-14 * scale) {
        return Err(FemError::DegenerateTet(t));
    }
    let inv = jac.try_inverse().ok_or(FemError::DegenerateTet(t))?;
    let g1: Vec3 = inv.row(0).transpose();
    let g2: Vec3 = inv.row(1).transpose();
    let g3: Vec3 = inv.row(2).transpose();
    Ok(ElementGeometry {
        volume: det.abs() / 6.0,
        grads: [-(g1 + g2 + g3), g1, g2, g3],
    })
}

fn check_barycentric(bary: &[f64; 4]) -> Result<(), FemError> {
    let sum: f64 = bary.iter().sum();
    if (sum - 1.0).abs() > 1e-12 || bary.iter().any(|l| !l.is_finite()) {
        return Err(FemError::InvalidBarycentric(*bary));
    }
    Ok(())
}

/// Piecewise linear scalar field, one value per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<'m> {
    mesh: &'m TetMesh,
    values: Vec<f64>,
}

impl<'m> ScalarField<'m> {
    pub fn new(mesh: &'m TetMesh, values: Vec<f64>) -> Result<Self, FemError> {
        if values.len() != mesh.num_vertices() {
            return Err(FemError::DimensionMismatch {
                expected: mesh.num_vertices(),
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().position(|x| !x.is_finite()) {
            return Err(FemError::NonFinite(v));
        }
        Ok(Self { mesh, values })
    }

    pub(crate) fn from_values_unchecked(mesh: &'m TetMesh, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), mesh.num_vertices());
        Self { mesh, values }
    }

    pub fn constant(mesh: &'m TetMesh, value: f64) -> Self {
        Self {
            mesh,
            values: vec![value; mesh.num_vertices()],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &'m TetMesh, f: impl Fn(&Vec3) -> f64 + Sync + Send) -> Self {
        Self {
            mesh,
            values: mesh.vertices().par_iter().map(f).collect(),
        }
    }

    pub fn mesh(&self) -> &'m TetMesh {
        self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn local(&self, t: usize) -> [f64; 4] {
        self.mesh.tets()[t].map(|v| self.values[v as usize])
    }

    pub fn eval(&self, t: usize, bary: &[f64; 4]) -> Result<f64, FemError> {
        check_barycentric(bary)?;
        Ok(self.eval_unchecked(t, bary))
    }

    pub(crate) fn eval_unchecked(&self, t: usize, bary: &[f64; 4]) -> f64 {
        let v = self.local(t);
        v[0] * bary[0] + v[1] * bary[1] + v[2] * bary[2] + v[3] * bary[3]
    }

    pub fn element_gradient(&self, t: usize) -> Result<Vec3, FemError> {
        let geo = element_geometry(self.mesh, t)?;
        Ok(self.gradient_with(t, &geo))
    }

    pub(crate) fn gradient_with(&self, t: usize, geo: &ElementGeometry) -> Vec3 {
        let v = self.local(t);
        geo.grads[0] * v[0] + geo.grads[1] * v[1] + geo.grads[2] * v[2] + geo.grads[3] * v[3]
    }

    /// Volume-weighted average of the element gradients around each vertex.
    pub fn recover_gradient(&self) -> Result<VectorField<'m>, FemError> {
        let mesh = self.mesh;
        let per_tet: Vec<(f64, Vec3)> = (0..mesh.num_tets())
            .into_par_iter()
            .map(|t| element_geometry(mesh, t).map(|geo| (geo.volume, self.gradient_with(t, &geo) * geo.volume)))
            .collect::<Result<_, _>>()?;
        let mut weight = vec![0.0; mesh.num_vertices()];
        let mut sum = vec![Vec3::zeros(); mesh.num_vertices()];
        for (tet, (volume, g)) in mesh.tets().iter().zip(&per_tet) {
            for &v in tet {
                weight[v as usize] += volume;
                sum[v as usize] += g;
            }
        }
        let values = sum.iter().zip(&weight).map(|(s, w)| s / *w).collect();
        Ok(VectorField { mesh, values })
    }
}

/// Piecewise linear vector field, one `Vec3` per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<'m> {
    mesh: &'m TetMesh,
    values: Vec<Vec3>,
}

impl<'m> VectorField<'m> {
    pub fn new(mesh: &'m TetMesh, values: Vec<Vec3>) -> Result<Self, FemError> {
        if values.len() != mesh.num_vertices() {
            return Err(FemError::DimensionMismatch {
                expected: mesh.num_vertices(),
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().position(|x| !x.iter().all(|c| c.is_finite())) {
            return Err(FemError::NonFinite(v));
        }
        Ok(Self { mesh, values })
    }

    pub fn interpolate(mesh: &'m TetMesh, f: impl Fn(&Vec3) -> Vec3 + Sync + Send) -> Self {
        Self {
            mesh,
            values: mesh.vertices().par_iter().map(f).collect(),
        }
    }

    /// Field from interleaved `[x0, y0, z0, x1, ...]` coefficients.
    pub fn from_interleaved(mesh: &'m TetMesh, coefficients: &[f64]) -> Result<Self, FemError> {
        if coefficients.len() != 3 * mesh.num_vertices() {
            return Err(FemError::DimensionMismatch {
                expected: 3 * mesh.num_vertices(),
                actual: coefficients.len(),
            });
        }
        let values = coefficients.chunks_exact(3).map(Vec3::from_column_slice).collect();
        Self::new(mesh, values)
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn mesh(&self) -> &'m TetMesh {
        self.mesh
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn local(&self, t: usize) -> [Vec3; 4] {
        self.mesh.tets()[t].map(|v| self.values[v as usize])
    }

    pub fn eval(&self, t: usize, bary: &[f64; 4]) -> Result<Vec3, FemError> {
        check_barycentric(bary)?;
        Ok(self.eval_unchecked(t, bary))
    }

    pub(crate) fn eval_unchecked(&self, t: usize, bary: &[f64; 4]) -> Vec3 {
        let v = self.local(t);
        v[0] * bary[0] + v[1] * bary[1] + v[2] * bary[2] + v[3] * bary[3]
    }

    /// Nodewise map, e.g. normalisation.
    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3 + Sync + Send) -> Self {
        Self {
            mesh: self.mesh,
            values: self.values.par_iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, BoxBounds};

    fn mesh(h: f64) -> TetMesh {
        build_box_mesh(BoxBounds::cube(2.0), h).unwrap()
    }

    #[test]
    fn evaluation_at_vertices_and_centroid() {
        let m = mesh(1.0);
        let f = ScalarField::interpolate(&m, |x| x.x);
        let t = 17;
        let local = f.local(t);
        assert_eq!(f.eval(t, &[1.0, 0.0, 0.0, 0.0]).unwrap(), local[0]);
        assert!((f.eval(t, &[0.25; 4]).unwrap() - m.centroid(t).x).abs() < 1e-15);
        let c = ScalarField::constant(&m, 3.5);
        assert!((c.eval(t, &[0.1, 0.2, 0.3, 0.4]).unwrap() - 3.5).abs() < 1e-15);
        assert!(matches!(f.eval(t, &[0.5, 0.5, 0.5, 0.0]), Err(FemError::InvalidBarycentric(_))));
    }

    #[test]
    fn gradients_of_linear_fields_are_exact() {
        let m = mesh(1.0);
        let f = ScalarField::interpolate(&m, |x| 2.0 * x.x);
        let c = ScalarField::constant(&m, 1.0);
        for t in 0..m.num_tets() {
            assert!((f.element_gradient(t).unwrap() - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-13);
            assert!(c.element_gradient(t).unwrap().norm() < 1e-13);
        }
        let g = ScalarField::interpolate(&m, |x| x.x - 3.0 * x.y + 0.5 * x.z).recover_gradient().unwrap();
        for v in g.values() {
            assert!((v - Vec3::new(1.0, -3.0, 0.5)).norm() < 1e-12);
        }
        let zero = c.recover_gradient().unwrap();
        assert!(zero.values().iter().all(|v| v.norm() < 1e-13));
    }

    #[test]
    fn element_gradient_of_quadratic_is_first_order() {
        let mut errors = Vec::new();
        let sizes = [0.5, 0.25, 0.125];
        for h in sizes {
            let m = mesh(h);
            let f = ScalarField::interpolate(&m, |x| x.x * x.x);
            let err = (0..m.num_tets())
                .filter(|&t| m.centroid(t).x > 1.0)
                .map(|t| (f.element_gradient(t).unwrap().x - 2.0 * m.centroid(t).x).abs())
                .fold(0.0, f64::max);
            errors.push(err);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 1.8 && ratio < 2.2, "{errors:?}");
        }
    }

    #[test]
    fn recovered_gradient_superconverges_on_structured_mesh() {
        let sizes = [0.5, 0.25, 0.125];
        let errors: Vec<f64> = sizes
            .iter()
            .map(|&h| {
                let m = mesh(h);
                let g = ScalarField::interpolate(&m, |x| x.x.sin() * x.y.cos() + x.z.powi(3))
                    .recover_gradient()
                    .unwrap();
                m.vertices()
                    .iter()
                    .zip(g.values())
                    .filter(|(x, _)| x.amax() < 1.5)
                    .map(|(x, v)| {
                        let exact = Vec3::new(x.x.cos() * x.y.cos(), -x.x.sin() * x.y.sin(), 3.0 * x.z * x.z);
                        (v - exact).norm()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let slope = crate::metrics::observed_order(&sizes, &errors).unwrap().slope;
        assert!(slope >= 1.5, "slope {slope}, errors {errors:?}");
    }

    #[test]
    fn nodal_interpolation_is_second_order_in_l2() {
        let sizes = [0.5, 0.25, 0.125];
        let rule = crate::fem::QuadratureRule::of_degree(6);
        let errors: Vec<f64> = sizes
            .iter()
            .map(|&h| {
                let m = mesh(h);
                let f = |x: &Vec3| (x.x).sin() * (0.5 * x.y).cos() + x.z * x.z;
                let fh = ScalarField::interpolate(&m, f);
                let mut sum = 0.0;
                for t in 0..m.num_tets() {
                    let x = m.tet_vertices(t);
                    let vol = m.volume(t);
                    for (p, w) in rule.iter() {
                        let e = fh.eval_unchecked(t, p) - f(&ElementGeometry::point(&x, p));
                        sum += vol * w * e * e;
                    }
                }
                sum.sqrt()
            })
            .collect();
        let slope = crate::metrics::observed_order(&sizes, &errors).unwrap().slope;
        assert!((slope - 2.0).abs() <= 0.2, "slope {slope}");
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let m = mesh(1.0);
        assert!(ScalarField::new(&m, vec![0.0; 3]).is_err());
        assert!(VectorField::from_interleaved(&m, &[0.0; 5]).is_err());
        let mut values = vec![0.0; m.num_vertices()];
        values[4] = f64::NAN;
        assert_eq!(ScalarField::new(&m, values), Err(FemError::NonFinite(4)));
    }
}
