//! Bounding-volume hierarchy over a closed triangulation with exact
//! point-to-surface distance and angle-weighted pseudonormal signs.

use super::triangulation::SurfaceTriangulation;
use super::DistanceSource;
use crate::geometry::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: offset into `order`. Internal: index of the right child (the left
    /// child directly follows its parent).
    index: u32,
    /// Number of triangles for a leaf, zero for internal nodes.
    count: u32,
}

/// Feature of a triangle containing the closest point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Face,
    /// Edge from local vertex `k` to `k + 1`.
    Edge(u8),
    Vertex(u8),
}

#[derive(Debug, Clone, Copy)]
pub struct Nearest {
    pub triangle: usize,
    pub point: Vec3,
    pub distance: f64,
    pub feature: Feature,
}

pub struct TriangleBvh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    nodes: Vec<Node>,
    order: Vec<u32>,
    /// Neighbour across edge `k -> k + 1` of each triangle.
    neighbours: Vec<[u32; 3]>,
    vertex_normals: Vec<Vec3>,
}

impl std::fmt::Debug for TriangleBvh {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TriangleBvh")
            .field("triangles", &self.triangles.len())
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

pub fn build_bvh(surface: &SurfaceTriangulation) -> TriangleBvh {
    TriangleBvh::new(surface)
}

impl TriangleBvh {
    pub fn new(surface: &SurfaceTriangulation) -> Self {
        let vertices = surface.vertices().to_vec();
        let triangles = surface.triangles().to_vec();
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| t.iter().map(|&v| vertices[v as usize]).sum::<Vec3>() / 3.0)
            .collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut bvh = Self {
            neighbours: edge_neighbours(&triangles),
            vertex_normals: angle_weighted_normals(&vertices, &triangles),
            vertices,
            triangles,
            nodes: Vec::with_capacity(2 * order.len() / LEAF_SIZE + 1),
            order: Vec::new(),
        };
        if !order.is_empty() {
            bvh.build_node(&mut order, 0, &centroids);
        }
        bvh.order = order;
        bvh
    }

    fn bounds_of(&self, tris: &[u32]) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &t in tris {
            for &v in &self.triangles[t as usize] {
                let x = &self.vertices[v as usize];
                lo = lo.inf(x);
                hi = hi.sup(x);
            }
        }
        (lo, hi)
    }

    fn build_node(&mut self, tris: &mut [u32], offset: usize, centroids: &[Vec3]) -> usize {
        let (lo, hi) = self.bounds_of(tris);
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            index: offset as u32,
            count: tris.len() as u32,
        });
        if tris.len() <= LEAF_SIZE {
            return id;
        }
        let mut clo = Vec3::repeat(f64::INFINITY);
        let mut chi = Vec3::repeat(f64::NEG_INFINITY);
        for &t in tris.iter() {
            clo = clo.inf(&centroids[t as usize]);
            chi = chi.sup(&centroids[t as usize]);
        }
        let axis = (chi - clo).imax();
        let mid = tris.len() / 2;
        tris.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
        });
        let (left, right) = tris.split_at_mut(mid);
        self.build_node(left, offset, centroids);
        let right_id = self.build_node(right, offset + mid, centroids);
        self.nodes[id].index = right_id as u32;
        self.nodes[id].count = 0;
        id
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Longest root-to-leaf path, counted in nodes.
    pub fn height(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            let n = nodes[id];
            if n.count > 0 {
                1
            } else {
                1 + walk(nodes, id + 1).max(walk(nodes, n.index as usize))
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }

    /// Checks that every triangle sits in exactly one leaf and that boxes nest.
    pub fn check_structure(&self) -> bool {
        let mut seen = vec![0u8; self.triangles.len()];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let n = self.nodes[id];
            if n.count > 0 {
                let range = n.index as usize..(n.index + n.count) as usize;
                for &t in &self.order[range.clone()] {
                    seen[t as usize] += 1;
                }
                let (lo, hi) = self.bounds_of(&self.order[range]);
                if (lo - n.lo).norm() > 0.0 || (hi - n.hi).norm() > 0.0 {
                    return false;
                }
            } else {
                for child in [id + 1, n.index as usize] {
                    let c = self.nodes[child];
                    let inside = (0..3).all(|k| c.lo[k] >= n.lo[k] && c.hi[k] <= n.hi[k]);
                    if !inside {
                        return false;
                    }
                    stack.push(child);
                }
            }
        }
        seen.iter().all(|&s| s == 1)
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|v| self.vertices[v as usize])
    }

    /// Exact nearest point on the triangulation.
    pub fn nearest(&self, x: &Vec3) -> Option<Nearest> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(f64, usize, Vec3, Feature)> = None;
        let mut best_d2 = f64::INFINITY;
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, box_distance2(&self.nodes[0], x)));
        while let Some((id, d2)) = stack.pop() {
            if d2 > best_d2 {
                continue;
            }
            let n = self.nodes[id];
            if n.count > 0 {
                for &t in &self.order[n.index as usize..(n.index + n.count) as usize] {
                    let [a, b, c] = self.triangle(t as usize);
                    let (p, feature) = closest_on_triangle(x, &a, &b, &c);
                    let dist2 = (x - p).norm_squared();
                    let better = match best {
                        None => true,
                        Some((bd, bt, _, _)) => dist2 < bd || (dist2 == bd && (t as usize) < bt),
                    };
                    if better {
                        best = Some((dist2, t as usize, p, feature));
                        best_d2 = dist2;
                    }
                }
            } else {
                let (l, r) = (id + 1, n.index as usize);
                let (dl, dr) = (box_distance2(&self.nodes[l], x), box_distance2(&self.nodes[r], x));
                // Push the farther child first so the nearer one is popped next.
                if dl <= dr {
                    stack.push((r, dr));
                    stack.push((l, dl));
                } else {
                    stack.push((l, dl));
                    stack.push((r, dr));
                }
            }
        }
        best.map(|(d2, triangle, point, feature)| Nearest {
            triangle,
            point,
            distance: d2.sqrt(),
            feature,
        })
    }

    /// Linear-scan nearest distance, used to validate the tree.
    pub fn nearest_linear(&self, x: &Vec3) -> Option<(usize, f64)> {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                let (p, _) = closest_on_triangle(x, &a, &b, &c);
                (t, (x - p).norm_squared())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(t, d2)| (t, d2.sqrt()))
    }

    fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(&(c - a)).normalize()
    }

    fn pseudonormal(&self, nearest: &Nearest) -> Vec3 {
        let t = nearest.triangle;
        match nearest.feature {
            Feature::Face => self.face_normal(t),
            Feature::Edge(k) => self.face_normal(t) + self.face_normal(self.neighbours[t][k as usize] as usize),
            Feature::Vertex(k) => self.vertex_normals[self.triangles[t][k as usize] as usize],
        }
    }

    /// Distance to the triangulation, negative inside.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        let Some(nearest) = self.nearest(x) else {
            return f64::INFINITY;
        };
        if nearest.distance == 0.0 {
            return 0.0;
        }
        let side = (x - nearest.point).dot(&self.pseudonormal(&nearest));
        if side == 0.0 {
            log::warn!("pseudonormal sign tie at ({}, {}, {}); taking positive", x.x, x.y, x.z);
        }
        if side < 0.0 {
            -nearest.distance
        } else {
            nearest.distance
        }
    }
}

impl DistanceSource for TriangleBvh {
    fn distance(&self, x: &Vec3) -> f64 {
        self.signed_distance(x)
    }
}

fn box_distance2(n: &Node, x: &Vec3) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let d = if x[k] < n.lo[k] {
            n.lo[k] - x[k]
        } else if x[k] > n.hi[k] {
            x[k] - n.hi[k]
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

fn edge_neighbours(triangles: &[[u32; 3]]) -> Vec<[u32; 3]> {
    let mut edges: Vec<(u64, u32, u8)> = Vec::with_capacity(3 * triangles.len());
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let key = (u64::from(a.min(b)) << 32) | u64::from(a.max(b));
            edges.push((key, t as u32, k as u8));
        }
    }
    edges.sort_unstable();
    let mut neighbours = vec![[u32::MAX; 3]; triangles.len()];
    for pair in edges.chunk_by(|a, b| a.0 == b.0) {
        if let [(_, t0, k0), (_, t1, k1)] = *pair {
            neighbours[t0 as usize][k0 as usize] = t1;
            neighbours[t1 as usize][k1 as usize] = t0;
        }
    }
    // Boundary edges fall back to the triangle itself.
    for (t, nb) in neighbours.iter_mut().enumerate() {
        for n in nb.iter_mut() {
            if *n == u32::MAX {
                *n = t as u32;
            }
        }
    }
    neighbours
}

fn angle_weighted_normals(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Vec<Vec3> {
    let mut normals = vec![Vec3::zeros(); vertices.len()];
    for tri in triangles {
        let x = tri.map(|v| vertices[v as usize]);
        let n = (x[1] - x[0]).cross(&(x[2] - x[0])).normalize();
        for k in 0..3 {
            let e1 = (x[(k + 1) % 3] - x[k]).normalize();
            let e2 = (x[(k + 2) % 3] - x[k]).normalize();
            let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
            normals[tri[k] as usize] += angle * n;
        }
    }
    normals
}

/// Closest point on triangle `abc` to `p` and the feature it lies on.
pub fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + v * ab, Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + w * ac, Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + w * (c - b), Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}
