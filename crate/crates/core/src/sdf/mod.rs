//! Signed-distance sources and nodal sampling of the implicit geometry.

mod bvh;
mod triangulation;

pub use bvh::{build_bvh, closest_on_triangle, Feature, Nearest, TriangleBvh};
pub use triangulation::{triangulate_torus, SurfaceTriangulation, TriangulationError};

use crate::fem::ScalarField;
use crate::geometry::{InterfaceProfile, TorusGeometry, Vec3};
use crate::mesh::TetMesh;
use rayon::prelude::*;

/// Anything that returns a signed distance, negative inside.
pub trait DistanceSource: Sync {
    fn distance(&self, x: &Vec3) -> f64;
}

impl DistanceSource for TorusGeometry {
    fn distance(&self, x: &Vec3) -> f64 {
        self.signed_distance(x)
    }
}

/// Distance to a triangulated surface through a BVH.
pub fn mesh_signed_distance(bvh: &TriangleBvh, x: &Vec3) -> f64 {
    bvh.signed_distance(x)
}

/// Nodal `rho_h` from the source and `phi_h` from the profile of `rho_h`.
pub fn sample_nodal_fields<'m>(
    source: &dyn DistanceSource,
    mesh: &'m TetMesh,
    profile: &InterfaceProfile,
) -> (ScalarField<'m>, ScalarField<'m>) {
    let rho: Vec<f64> = mesh.vertices().par_iter().map(|x| source.distance(x)).collect();
    let phi: Vec<f64> = rho.iter().map(|&r| profile.phase_field(r)).collect();
    (
        ScalarField::from_values_unchecked(mesh, rho),
        ScalarField::from_values_unchecked(mesh, phi),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, BoxBounds};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_sampling_on_surface_nodes() {
        let g = TorusGeometry::benchmark();
        let mesh = build_box_mesh(BoxBounds::cube(2.0), 0.5).unwrap();
        let profile = InterfaceProfile::new(0.2).unwrap();
        let (rho, phi) = sample_nodal_fields(&g, &mesh, &profile);
        let on_surface = mesh.find_vertex(&Vec3::new(1.5, 0.0, 0.0)).unwrap();
        assert_eq!(rho.values()[on_surface], 0.0);
        assert_eq!(phi.values()[on_surface], 0.5);
        for (r, p) in rho.values().iter().zip(phi.values()) {
            assert_eq!(*p, profile.phase_field(*r));
        }
    }

    /// Distance error of the chordal triangulation at fixed near-surface samples.
    #[test]
    fn mesh_distance_is_second_order() {
        let g = TorusGeometry::benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<Vec3> = (0..1000)
            .map(|_| {
                let u = rng.gen::<f64>() * std::f64::consts::TAU;
                let v = rng.gen::<f64>() * std::f64::consts::TAU;
                let t = (rng.gen::<f64>() - 0.5) * 0.2;
                let y = g.parametric_point(u, v);
                y + t * g.normal(&y).unwrap()
            })
            .collect();
        let sizes = [0.2, 0.1, 0.05, 0.025];
        let errors: Vec<f64> = sizes
            .iter()
            .map(|&h| {
                let bvh = build_bvh(&triangulate_torus(&g, h).unwrap());
                samples
                    .iter()
                    .map(|x| (mesh_signed_distance(&bvh, x) - g.signed_distance(x)).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let slope = crate::metrics::observed_order(&sizes, &errors).unwrap().slope;
        assert!((slope - 2.0).abs() <= 0.3, "slope {slope}, errors {errors:?}");
    }
}
