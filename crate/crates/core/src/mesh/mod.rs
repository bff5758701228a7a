//! Conforming tetrahedral meshes of an axis-aligned box.
//!
//! Meshes start from a Kuhn (Freudenthal) split of a cube grid and are refined
//! by longest-edge bisection, see [`refine`].

mod refine;
mod stats;
pub mod vtk;

pub use refine::{bisect_all, refine_to_band, RefineOptions, RefinementBand};
pub use stats::{mesh_statistics, MeshStatistics};

use crate::geometry::Vec3;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("cell size {h0} does not divide the box extent {extent}")]
    IndivisibleCellSize { h0: f64, extent: f64 },
    #[error("degenerate box bounds")]
    InvalidBounds,
    #[error("refinement exceeded the maximum level {max_level}")]
    BudgetExceeded { max_level: u16 },
    #[error("invalid refinement band: {0}")]
    InvalidBand(String),
    #[error("tetrahedron {tet} has non-positive volume {volume}")]
    NonPositiveVolume { tet: usize, volume: f64 },
    #[error("mesh is not conforming: {0}")]
    NonConforming(String),
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxBounds {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl BoxBounds {
    pub fn new(lo: Vec3, hi: Vec3) -> Result<Self, MeshError> {
        if (0..3).all(|k| hi[k] > lo[k]) {
            Ok(Self { lo, hi })
        } else {
            Err(MeshError::InvalidBounds)
        }
    }

    /// The cube `[-half, half]^3`.
    pub fn cube(half: f64) -> Self {
        Self {
            lo: Vec3::repeat(-half),
            hi: Vec3::repeat(half),
        }
    }

    pub fn volume(&self) -> f64 {
        (self.hi - self.lo).product()
    }

    fn on_boundary(&self, x: &Vec3, axis: usize) -> bool {
        x[axis] == self.lo[axis] || x[axis] == self.hi[axis]
    }
}

/// Tetrahedral mesh with positively oriented cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    bounds: BoxBounds,
    vertices: Vec<Vec3>,
    tets: Vec<[u32; 4]>,
    levels: Vec<u16>,
}

/// Faces opposite to each local vertex, oriented consistently.
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Structured grid of `h0`-cubes, each split into the six Kuhn tetrahedra
/// around its main diagonal.
pub fn build_box_mesh(bounds: BoxBounds, h0: f64) -> Result<TetMesh, MeshError> {
    let extent = bounds.hi - bounds.lo;
    let mut cells = [0usize; 3];
    for k in 0..3 {
        let n = extent[k] / h0;
        let rounded = n.round();
        if !(h0 > 0.0) || rounded < 1.0 || (n - rounded).abs() > 1e-9 * n.max(1.0) {
            return Err(MeshError::IndivisibleCellSize {
                h0,
                extent: extent[k],
            });
        }
        cells[k] = rounded as usize;
    }
    let [nx, ny, nz] = cells;
    let node = |i: usize, j: usize, k: usize| (i + (nx + 1) * (j + (ny + 1) * k)) as u32;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                // Interpolate from both ends so the far faces are hit exactly.
                let coord = |lo: f64, hi: f64, idx: usize, n: usize| {
                    if idx == n {
                        hi
                    } else {
                        lo + (hi - lo) * idx as f64 / n as f64
                    }
                };
                vertices.push(Vec3::new(
                    coord(bounds.lo.x, bounds.hi.x, i, nx),
                    coord(bounds.lo.y, bounds.hi.y, j, ny),
                    coord(bounds.lo.z, bounds.hi.z, k, nz),
                ));
            }
        }
    }

    const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in PERMUTATIONS {
                    let mut idx = [i, j, k];
                    let mut tet = [node(i, j, k); 4];
                    for (step, &axis) in perm.iter().enumerate() {
                        idx[axis] += 1;
                        tet[step + 1] = node(idx[0], idx[1], idx[2]);
                    }
                    tets.push(tet);
                }
            }
        }
    }
    let mut mesh = TetMesh {
        bounds,
        vertices,
        levels: vec![0; tets.len()],
        tets,
    };
    for t in 0..mesh.tets.len() {
        if mesh.signed_volume(t) < 0.0 {
            mesh.tets[t].swap(2, 3);
        }
    }
    Ok(mesh)
}

impl TetMesh {
    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[u32; 4]] {
        &self.tets
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    /// Bisection generation of each tetrahedron.
    pub fn levels(&self) -> &[u16] {
        &self.levels
    }

    pub fn tet_vertices(&self, t: usize) -> [Vec3; 4] {
        self.tets[t].map(|v| self.vertices[v as usize])
    }

    pub fn signed_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tet_vertices(t);
        (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
    }

    pub fn volume(&self, t: usize) -> f64 {
        self.signed_volume(t).abs()
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.num_tets()).map(|t| self.volume(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Vec3 {
        let [a, b, c, d] = self.tet_vertices(t);
        (a + b + c + d) * 0.25
    }

    /// Longest edge length.
    pub fn diameter(&self, t: usize) -> f64 {
        let x = self.tet_vertices(t);
        TET_EDGES
            .iter()
            .map(|&(i, j)| (x[i] - x[j]).norm_squared())
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Local mesh size `h_T = (6 |T|)^(1/3)`: the side of the cube whose Kuhn
    /// split has cells of the same volume. Each bisection scales it by `2^(-1/3)`.
    pub fn size(&self, t: usize) -> f64 {
        (6.0 * self.volume(t)).cbrt()
    }

    /// Largest distance from the centroid to a vertex.
    pub fn centroid_radius(&self, t: usize) -> f64 {
        let c = self.centroid(t);
        self.tet_vertices(t)
            .iter()
            .map(|x| (x - c).norm())
            .fold(0.0, f64::max)
    }

    /// Smallest dihedral angle of cell `t`, in degrees.
    pub fn min_dihedral_angle(&self, t: usize) -> f64 {
        let x = self.tet_vertices(t);
        let normal = |f: [usize; 3]| (x[f[1]] - x[f[0]]).cross(&(x[f[2]] - x[f[0]])).normalize();
        let n = TET_FACES.map(normal);
        let mut min = 180.0f64;
        for i in 0..4 {
            for j in (i + 1)..4 {
                // Outward normals of two faces; the interior angle is pi minus their angle.
                let cos = (-n[i].dot(&n[j])).clamp(-1.0, 1.0);
                min = min.min(cos.acos().to_degrees());
            }
        }
        min
    }

    /// Neighbour across each face (face `i` is opposite local vertex `i`),
    /// `None` on the box boundary.
    pub fn face_adjacency(&self) -> Result<Vec<[Option<u32>; 4]>, MeshError> {
        let mut faces: Vec<([u32; 3], u32, u8)> = Vec::with_capacity(4 * self.tets.len());
        for (t, tet) in self.tets.iter().enumerate() {
            for (i, f) in TET_FACES.iter().enumerate() {
                let mut key = f.map(|k| tet[k]);
                key.sort_unstable();
                faces.push((key, t as u32, i as u8));
            }
        }
        faces.sort_unstable();
        let mut adjacency = vec![[None; 4]; self.tets.len()];
        let mut i = 0;
        while i < faces.len() {
            let mut j = i + 1;
            while j < faces.len() && faces[j].0 == faces[i].0 {
                j += 1;
            }
            match j - i {
                1 => {
                    let (key, t, _) = faces[i];
                    let on_boundary = (0..3).any(|axis| {
                        let coord = self.vertices[key[0] as usize][axis];
                        key.iter().all(|&v| {
                            let x = &self.vertices[v as usize];
                            x[axis] == coord && self.bounds.on_boundary(x, axis)
                        })
                    });
                    if !on_boundary {
                        return Err(MeshError::NonConforming(format!(
                            "interior face {key:?} of tet {t} has no neighbour (hanging vertex)"
                        )));
                    }
                }
                2 => {
                    let (_, a, fa) = faces[i];
                    let (_, b, fb) = faces[i + 1];
                    adjacency[a as usize][fa as usize] = Some(b);
                    adjacency[b as usize][fb as usize] = Some(a);
                }
                n => {
                    return Err(MeshError::NonConforming(format!(
                        "face {:?} shared by {n} tetrahedra",
                        faces[i].0
                    )))
                }
            }
            i = j;
        }
        Ok(adjacency)
    }

    /// Checks orientation, face matching and that the cells tile the box.
    pub fn audit(&self) -> Result<(), MeshError> {
        for t in 0..self.num_tets() {
            let volume = self.signed_volume(t);
            if !(volume > 0.0) {
                return Err(MeshError::NonPositiveVolume { tet: t, volume });
            }
        }
        self.face_adjacency()?;
        let expected = self.bounds.volume();
        let total = self.total_volume();
        if (total - expected).abs() > 1e-9 * expected {
            return Err(MeshError::NonConforming(format!(
                "total volume {total} differs from box volume {expected}"
            )));
        }
        Ok(())
    }

    /// Index of the vertex at `x`, if any (linear scan).
    pub fn find_vertex(&self, x: &Vec3) -> Option<usize> {
        self.vertices.iter().position(|v| v == x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mesh_counts() {
        let m = build_box_mesh(BoxBounds::cube(2.0), 1.0).unwrap();
        assert_eq!(m.num_tets(), 384);
        assert_eq!(m.num_vertices(), 125);
        assert!((m.total_volume() - 64.0).abs() < 1e-12);
        let m = build_box_mesh(BoxBounds::cube(2.0), 0.5).unwrap();
        assert_eq!(m.num_tets(), 3072);
        for t in 0..m.num_tets() {
            assert!((m.signed_volume(t) - 0.125 / 6.0).abs() < 1e-15);
            assert!((m.size(t) - 0.5).abs() < 1e-12);
        }
        m.audit().unwrap();
    }

    #[test]
    fn indivisible_cell_size() {
        assert!(matches!(
            build_box_mesh(BoxBounds::cube(2.0), 0.3),
            Err(MeshError::IndivisibleCellSize { .. })
        ));
        assert!(build_box_mesh(BoxBounds::cube(2.0), 0.0).is_err());
    }

    #[test]
    fn kuhn_cells_are_regular() {
        let m = build_box_mesh(BoxBounds::cube(2.0), 1.0).unwrap();
        for t in 0..m.num_tets() {
            assert!((m.diameter(t) - 3f64.sqrt()).abs() < 1e-14);
            assert!((m.min_dihedral_angle(t) - 45.0).abs() < 1e-9);
        }
    }

    #[test]
    fn audit_detects_missing_cell() {
        let mut m = build_box_mesh(BoxBounds::cube(2.0), 1.0).unwrap();
        m.tets.pop();
        m.levels.pop();
        assert!(m.audit().is_err());
    }

    #[test]
    fn adjacency_is_symmetric() {
        let m = build_box_mesh(BoxBounds::cube(2.0), 1.0).unwrap();
        let adj = m.face_adjacency().unwrap();
        let mut interior = 0;
        for (t, faces) in adj.iter().enumerate() {
            for nb in faces.iter().flatten() {
                interior += 1;
                assert!(adj[*nb as usize].contains(&Some(t as u32)));
            }
        }
        // 6 * 4 * 4^3 / 2 interior faces per direction pair.
        let boundary = 6 * 16 * 2;
        assert_eq!(interior + boundary, 4 * m.num_tets());
    }
}
