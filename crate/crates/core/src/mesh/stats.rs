use super::{RefinementBand, TetMesh};
use serde::Serialize;

/// Size distribution of the cells meeting the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshStatistics {
    pub vertices: usize,
    pub tets: usize,
    pub band_tets: usize,
    pub band_h_min: f64,
    pub band_h_max: f64,
    pub band_h_mean: f64,
    /// Number of cells across the `phi in [0.05, 0.95]` layer, `width / mean h_T`.
    pub points_across_interface: f64,
}

pub fn mesh_statistics(mesh: &TetMesh, band: &RefinementBand<'_>) -> MeshStatistics {
    let mask = band.mask(mesh);
    let sizes: Vec<f64> = (0..mesh.num_tets())
        .filter(|&t| mask[t])
        .map(|t| mesh.size(t))
        .collect();
    let (min, max, mean) = if sizes.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let min = sizes.iter().copied().fold(f64::INFINITY, f64::min);
        let max = sizes.iter().copied().fold(0.0, f64::max);
        (min, max, sizes.iter().sum::<f64>() / sizes.len() as f64)
    };
    let across = if mean > 0.0 { band.width() / mean } else { 0.0 };
    MeshStatistics {
        vertices: mesh.num_vertices(),
        tets: mesh.num_tets(),
        band_tets: sizes.len(),
        band_h_min: min,
        band_h_max: max,
        band_h_mean: mean,
        points_across_interface: across,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{InterfaceProfile, TorusGeometry};
    use crate::mesh::{build_box_mesh, refine_to_band, BoxBounds, RefineOptions};

    #[test]
    fn uniform_mesh_has_flat_size_distribution() {
        let g = TorusGeometry::benchmark();
        let m = build_box_mesh(BoxBounds::cube(2.0), 0.5).unwrap();
        let band = RefinementBand::new(&g, InterfaceProfile::new(0.2).unwrap(), 0.5).unwrap();
        let s = mesh_statistics(&m, &band);
        assert_eq!(s.band_h_min, s.band_h_max);
        assert!((s.band_h_mean - s.band_h_min).abs() < 1e-15);
        assert_eq!(s.tets, 3072);
    }

    #[test]
    fn halving_h_doubles_points_across() {
        let g = TorusGeometry::benchmark();
        let profile = InterfaceProfile::new(0.3).unwrap();
        let across = |h: f64| {
            let band = RefinementBand::new(&g, profile, h).unwrap();
            let m = build_box_mesh(BoxBounds::cube(2.0), 1.0).unwrap();
            let m = refine_to_band(m, &band, RefineOptions::default()).unwrap();
            mesh_statistics(&m, &band).points_across_interface
        };
        let (a, b) = (across(0.25), across(0.125));
        let ratio = b / a;
        assert!((ratio - 2.0).abs() < 0.4, "{a} {b}");
    }
}
