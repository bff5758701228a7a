//! Shared fixtures for the benchmarks.

use dilab_core::mesh::{build_box_mesh, refine_to_band, BoxBounds, RefineOptions, RefinementBand};
use dilab_core::{InterfaceProfile, TetMesh, TorusGeometry};

/// Box mesh refined to `h` around the benchmark torus with the linear relation.
pub fn band_mesh(h: f64) -> (TetMesh, TorusGeometry, InterfaceProfile) {
    let torus = TorusGeometry::benchmark();
    let profile = InterfaceProfile::for_torus(1.6 * h, &torus).expect("valid width");
    let band = RefinementBand::new(&torus, profile, h).expect("valid band");
    let coarse = build_box_mesh(BoxBounds::cube(2.0), 0.5).expect("box mesh");
    let mesh = refine_to_band(coarse, &band, RefineOptions::default()).expect("refinement");
    (mesh, torus, profile)
}
