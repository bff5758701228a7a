//! Longest-edge bisection towards a target size inside the diffuse-interface band.

use super::{MeshError, TetMesh, TET_EDGES};
use crate::geometry::{InterfaceProfile, Vec3};
use crate::sdf::DistanceSource;
use rustc_hash::FxHashMap;

/// Region `phi in [phi_lo, phi_hi]` of an interface profile around the zero
/// level of a signed-distance source, with the mesh size required inside it.
#[derive(Clone, Copy)]
pub struct RefinementBand<'s> {
    source: &'s dyn DistanceSource,
    profile: InterfaceProfile,
    phi_lo: f64,
    phi_hi: f64,
    target_h: f64,
}

impl std::fmt::Debug for RefinementBand<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RefinementBand")
            .field("profile", &self.profile)
            .field("phi_lo", &self.phi_lo)
            .field("phi_hi", &self.phi_hi)
            .field("target_h", &self.target_h)
            .finish()
    }
}

impl<'s> RefinementBand<'s> {
    pub const DEFAULT_BOUNDS: (f64, f64) = (0.05, 0.95);

    pub fn new(
        source: &'s dyn DistanceSource,
        profile: InterfaceProfile,
        target_h: f64,
    ) -> Result<Self, MeshError> {
        let (lo, hi) = Self::DEFAULT_BOUNDS;
        Self::with_bounds(source, profile, target_h, lo, hi)
    }

    pub fn with_bounds(
        source: &'s dyn DistanceSource,
        profile: InterfaceProfile,
        target_h: f64,
        phi_lo: f64,
        phi_hi: f64,
    ) -> Result<Self, MeshError> {
        if !(0.0 < phi_lo && phi_lo < phi_hi && phi_hi < 1.0) {
            return Err(MeshError::InvalidBand(format!(
                "phase-field bounds [{phi_lo}, {phi_hi}] must lie strictly inside (0, 1)"
            )));
        }
        if !(target_h > 0.0 && target_h.is_finite()) {
            return Err(MeshError::InvalidBand(format!("target size {target_h}")));
        }
        Ok(Self {
            source,
            profile,
            phi_lo,
            phi_hi,
            target_h,
        })
    }

    pub fn profile(&self) -> &InterfaceProfile {
        &self.profile
    }

    pub fn source(&self) -> &'s dyn DistanceSource {
        self.source
    }

    pub fn target_h(&self) -> f64 {
        self.target_h
    }

    /// The band as a signed-distance interval `[rho_lo, rho_hi]`.
    pub fn rho_interval(&self) -> (f64, f64) {
        (self.profile.rho_at(self.phi_hi), self.profile.rho_at(self.phi_lo))
    }

    /// Width of the band along a normal line.
    pub fn width(&self) -> f64 {
        self.profile.band_width(self.phi_lo, self.phi_hi)
    }

    fn contains_rho(&self, rho: f64) -> bool {
        let (lo, hi) = self.rho_interval();
        (lo..=hi).contains(&rho)
    }

    /// Band membership of cell `t` from its vertex distances.
    pub fn hits(&self, mesh: &TetMesh, t: usize, vertex_rho: &[f64; 4]) -> bool {
        let (lo, hi) = self.rho_interval();
        if vertex_rho.iter().any(|&r| self.contains_rho(r)) {
            return true;
        }
        let min = vertex_rho.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vertex_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // The whole slab lies between two vertices.
        if min < lo && max > hi {
            return true;
        }
        let rho_c = self.source.distance(&mesh.centroid(t));
        if self.contains_rho(rho_c) {
            return true;
        }
        // Cells wider than the band can contain it without any sample inside;
        // use the 1-Lipschitz bound of the distance around the centroid.
        if mesh.diameter(t) > self.width() {
            let reach = mesh.centroid_radius(t);
            return rho_c - reach <= hi && rho_c + reach >= lo;
        }
        false
    }

    /// Per-cell band membership for the whole mesh.
    pub fn mask(&self, mesh: &TetMesh) -> Vec<bool> {
        let rho: Vec<f64> = mesh.vertices().iter().map(|x| self.source.distance(x)).collect();
        (0..mesh.num_tets())
            .map(|t| {
                let vr = mesh.tets()[t].map(|v| rho[v as usize]);
                self.hits(mesh, t, &vr)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    /// Maximal bisection generation of any cell.
    pub max_level: u16,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { max_level: 60 }
    }
}

/// Bisects every cell meeting the band until `h_T <= h`, closing each sweep
/// with longest-edge bisections of cells that carry a hanging vertex.
pub fn refine_to_band(
    mesh: TetMesh,
    band: &RefinementBand<'_>,
    options: RefineOptions,
) -> Result<TetMesh, MeshError> {
    let mut bisector = Bisector::new(mesh, band.source);
    let limit = band.target_h * (1.0 + 1e-9);
    loop {
        let marked: Vec<usize> = (0..bisector.mesh.num_tets())
            .filter(|&t| bisector.mesh.size(t) > limit && band.hits(&bisector.mesh, t, &bisector.vertex_rho(t)))
            .collect();
        if marked.is_empty() {
            break;
        }
        log::debug!(
            "refinement sweep: {} of {} cells marked",
            marked.len(),
            bisector.mesh.num_tets()
        );
        for t in marked {
            bisector.bisect(t, options.max_level)?;
        }
        bisector.close(options.max_level)?;
    }
    Ok(bisector.mesh)
}

/// Uniform refinement: every cell bisected once, then closed.
pub fn bisect_all(mesh: TetMesh, source: &dyn DistanceSource) -> Result<TetMesh, MeshError> {
    let mut bisector = Bisector::new(mesh, source);
    for t in 0..bisector.mesh.num_tets() {
        bisector.bisect(t, u16::MAX)?;
    }
    bisector.close(u16::MAX)?;
    Ok(bisector.mesh)
}

fn edge_key(a: u32, b: u32) -> u64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    (u64::from(lo) << 32) | u64::from(hi)
}

struct Bisector<'s> {
    mesh: TetMesh,
    midpoints: FxHashMap<u64, u32>,
    rho: Vec<f64>,
    source: &'s dyn DistanceSource,
}

impl<'s> Bisector<'s> {
    fn new(mesh: TetMesh, source: &'s dyn DistanceSource) -> Self {
        let rho = mesh.vertices.iter().map(|x| source.distance(x)).collect();
        Self {
            mesh,
            midpoints: FxHashMap::default(),
            rho,
            source,
        }
    }

    fn vertex_rho(&self, t: usize) -> [f64; 4] {
        self.mesh.tets[t].map(|v| self.rho[v as usize])
    }

    /// Local indices of the refinement edge: the longest, ties broken by the
    /// smallest global vertex pair.
    fn refinement_edge(&self, t: usize) -> (usize, usize) {
        let tet = self.mesh.tets[t];
        let mut best = TET_EDGES[0];
        let mut best_len = -1.0;
        let mut best_key = u64::MAX;
        for &(i, j) in &TET_EDGES {
            let len = (self.mesh.vertices[tet[i] as usize] - self.mesh.vertices[tet[j] as usize]).norm_squared();
            let key = edge_key(tet[i], tet[j]);
            if len > best_len || (len == best_len && key < best_key) {
                best = (i, j);
                best_len = len;
                best_key = key;
            }
        }
        best
    }

    fn midpoint(&mut self, a: u32, b: u32) -> u32 {
        let key = edge_key(a, b);
        if let Some(&m) = self.midpoints.get(&key) {
            return m;
        }
        let x: Vec3 = 0.5 * (self.mesh.vertices[a as usize] + self.mesh.vertices[b as usize]);
        let m = self.mesh.vertices.len() as u32;
        self.mesh.vertices.push(x);
        self.rho.push(self.source.distance(&x));
        self.midpoints.insert(key, m);
        m
    }

    fn bisect(&mut self, t: usize, max_level: u16) -> Result<(), MeshError> {
        let level = self.mesh.levels[t];
        if level >= max_level {
            return Err(MeshError::BudgetExceeded { max_level });
        }
        let (i, j) = self.refinement_edge(t);
        let tet = self.mesh.tets[t];
        let m = self.midpoint(tet[i], tet[j]);
        let mut first = tet;
        first[j] = m;
        let mut second = tet;
        second[i] = m;
        self.mesh.tets[t] = first;
        self.mesh.levels[t] = level + 1;
        self.mesh.tets.push(second);
        self.mesh.levels.push(level + 1);
        Ok(())
    }

    fn has_hanging_vertex(&self, t: usize) -> bool {
        let tet = self.mesh.tets[t];
        TET_EDGES
            .iter()
            .any(|&(i, j)| self.midpoints.contains_key(&edge_key(tet[i], tet[j])))
    }

    fn close(&mut self, max_level: u16) -> Result<(), MeshError> {
        loop {
            let mut changed = false;
            let mut t = 0;
            while t < self.mesh.tets.len() {
                if self.has_hanging_vertex(t) {
                    self.bisect(t, max_level)?;
                    changed = true;
                } else {
                    t += 1;
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }
}
