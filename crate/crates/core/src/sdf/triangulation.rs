use crate::geometry::{TorusGeometry, Vec3};
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TriangulationError {
    #[error("surface mesh size {h_s} outside (0, r = {minor})")]
    SizeOutOfRange { h_s: f64, minor: f64 },
    #[error("surface is not watertight: {0}")]
    NotWatertight(String),
    #[error("malformed OFF input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Closed triangulated surface with vertices on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceTriangulation {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    h_s: f64,
}

impl SurfaceTriangulation {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, TriangulationError> {
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&v| v >= n)) {
            return Err(TriangulationError::NotWatertight(format!("triangle {t:?} references a missing vertex")));
        }
        let mut surface = Self {
            vertices,
            triangles,
            h_s: 0.0,
        };
        surface.h_s = surface.max_edge_length();
        Ok(surface)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Nominal edge length.
    pub fn h_s(&self) -> f64 {
        self.h_s
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|v| self.vertices[v as usize])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Volume enclosed by the surface, positive for outward orientation.
    pub fn enclosed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (self.vertices[a as usize] - self.vertices[b as usize]).norm())
            .fold(0.0, f64::max)
    }

    /// Undirected edges with their multiplicity, sorted.
    fn edge_counts(&self) -> Vec<((u32, u32), usize)> {
        let mut edges: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        let mut counts: Vec<((u32, u32), usize)> = Vec::new();
        for e in edges {
            match counts.last_mut() {
                Some((last, n)) if *last == e => *n += 1,
                _ => counts.push((e, 1)),
            }
        }
        counts
    }

    pub fn num_edges(&self) -> usize {
        self.edge_counts().len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.num_edges() as i64 + self.triangles.len() as i64
    }

    /// Every edge shared by exactly two triangles that traverse it in
    /// opposite directions.
    pub fn check_watertight(&self) -> Result<(), TriangulationError> {
        if let Some(((a, b), n)) = self.edge_counts().into_iter().find(|&(_, n)| n != 2) {
            return Err(TriangulationError::NotWatertight(format!("edge ({a}, {b}) used by {n} triangles")));
        }
        let mut directed: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .collect();
        directed.sort_unstable();
        if let Some(w) = directed.windows(2).find(|w| w[0] == w[1]) {
            return Err(TriangulationError::NotWatertight(format!(
                "edge {:?} traversed twice in the same direction",
                w[0]
            )));
        }
        Ok(())
    }

    /// ASCII OFF: header, counts line, vertex lines, polygon lines.
    pub fn write_off<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "OFF")?;
        writeln!(out, "{} {} {}", self.vertices.len(), self.triangles.len(), self.num_edges())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn read_off<R: BufRead>(input: R) -> Result<Self, TriangulationError> {
        let mut tokens = Vec::new();
        for line in input.lines() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        match it.next().as_deref() {
            Some("OFF") => {}
            other => return Err(TriangulationError::Parse(format!("expected OFF header, found {other:?}"))),
        }
        fn next<T: std::str::FromStr>(it: &mut impl Iterator<Item = String>, what: &str) -> Result<T, TriangulationError> {
            let tok = it
                .next()
                .ok_or_else(|| TriangulationError::Parse(format!("unexpected end of input reading {what}")))?;
            tok.parse()
                .map_err(|_| TriangulationError::Parse(format!("invalid {what} '{tok}'")))
        }
        let nv: usize = next(&mut it, "vertex count")?;
        let nf: usize = next(&mut it, "face count")?;
        let _ne: usize = next(&mut it, "edge count")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            vertices.push(Vec3::new(
                next(&mut it, "coordinate")?,
                next(&mut it, "coordinate")?,
                next(&mut it, "coordinate")?,
            ));
        }
        let mut triangles = Vec::with_capacity(nf);
        for _ in 0..nf {
            let k: usize = next(&mut it, "polygon size")?;
            if k != 3 {
                return Err(TriangulationError::Parse(format!("only triangles are supported, got a {k}-gon")));
            }
            triangles.push([next(&mut it, "index")?, next(&mut it, "index")?, next(&mut it, "index")?]);
        }
        Self::new(vertices, triangles)
    }
}

/// Parametric (major angle x tube angle) grid with every quad split along the
/// same diagonal, fine enough that no edge exceeds `h_s`.
pub fn triangulate_torus(g: &TorusGeometry, h_s: f64) -> Result<SurfaceTriangulation, TriangulationError> {
    let (big, small) = (g.major_radius(), g.minor_radius());
    if !(h_s > 0.0 && h_s < small) {
        return Err(TriangulationError::SizeOutOfRange { h_s, minor: small });
    }
    let pi = std::f64::consts::PI;
    let chord_count = |radius: f64| (pi / (h_s / (2.0 * 2f64.sqrt() * radius)).asin()).ceil().max(3.0) as usize;
    let mut nu = chord_count(big + small);
    let mut nv = chord_count(small);
    while max_grid_edge(g, nu, nv) > h_s {
        nu += 1 + nu / 100;
        nv += 1 + nv / 100;
    }

    let angle = |i: usize, n: usize| 2.0 * pi * i as f64 / n as f64;
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            vertices.push(g.parametric_point(angle(i, nu), angle(j, nv)));
        }
    }
    let id = |i: usize, j: usize| ((i % nu) * nv + (j % nv)) as u32;
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut surface = SurfaceTriangulation::new(vertices, triangles)?;
    surface.h_s = h_s;
    Ok(surface)
}

/// Longest edge of the parametric grid; by rotational symmetry one column suffices.
fn max_grid_edge(g: &TorusGeometry, nu: usize, nv: usize) -> f64 {
    let tau = std::f64::consts::TAU;
    let du = tau / nu as f64;
    let dv = tau / nv as f64;
    (0..nv)
        .map(|j| {
            let v = j as f64 * dv;
            let p = g.parametric_point(0.0, v);
            let along_u = g.parametric_point(du, v);
            let along_v = g.parametric_point(0.0, v + dv);
            let diagonal = g.parametric_point(du, v + dv);
            (p - along_u)
                .norm()
                .max((p - along_v).norm())
                .max((p - diagonal).norm())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_triangulation_invariants() {
        let g = TorusGeometry::benchmark();
        for h in [0.3, 0.1, 0.05] {
            let s = triangulate_torus(&g, h).unwrap();
            assert_eq!(s.euler_characteristic(), 0);
            s.check_watertight().unwrap();
            assert!(s.max_edge_length() <= h);
            assert!(s.enclosed_volume() > 0.0);
            for v in s.vertices() {
                assert!(g.signed_distance(v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_sizes_outside_tube() {
        let g = TorusGeometry::benchmark();
        assert!(triangulate_torus(&g, 0.5).is_err());
        assert!(triangulate_torus(&g, 0.0).is_err());
    }

    #[test]
    fn area_converges_quadratically() {
        let g = TorusGeometry::benchmark();
        let sizes = [0.2, 0.1, 0.05, 0.025];
        let errors: Vec<f64> = sizes
            .iter()
            .map(|&h| (g.area() - triangulate_torus(&g, h).unwrap().area()).abs())
            .collect();
        assert!((g.area() - 19.739_208_802_178_716).abs() < 1e-12);
        // Least-squares slope of log(error) against log(h).
        let xs: Vec<f64> = sizes.iter().map(|h: &f64| h.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let mx = xs.iter().sum::<f64>() / 4.0;
        let my = ys.iter().sum::<f64>() / 4.0;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}, errors {errors:?}");
    }

    #[test]
    fn off_round_trip() {
        let g = TorusGeometry::benchmark();
        let s = triangulate_torus(&g, 0.3).unwrap();
        let mut buf = Vec::new();
        s.write_off(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("OFF\n"));
        let back = SurfaceTriangulation::read_off(buf.as_slice()).unwrap();
        assert_eq!(back.triangles(), s.triangles());
        assert_eq!(back.vertices(), s.vertices());
    }

    #[test]
    fn off_rejects_garbage() {
        assert!(SurfaceTriangulation::read_off("PLY\n".as_bytes()).is_err());
        assert!(SurfaceTriangulation::read_off("OFF\n1 1 0\n0 0 0\n3 0 1 2\n".as_bytes()).is_err());
        assert!(SurfaceTriangulation::read_off("OFF\n4 1 0\n0 0 0 1 0 0 0 1 0 0 0 1\n4 0 1 2 3\n".as_bytes()).is_err());
    }

    #[test]
    fn open_surface_is_not_watertight() {
        let g = TorusGeometry::benchmark();
        let s = triangulate_torus(&g, 0.3).unwrap();
        let mut tris = s.triangles().to_vec();
        tris.pop();
        let open = SurfaceTriangulation::new(s.vertices().to_vec(), tris).unwrap();
        assert!(open.check_watertight().is_err());
    }
}
