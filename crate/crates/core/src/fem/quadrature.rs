//! Quadrature on the reference tetrahedron in barycentric form.
//!
//! Weights are normalised to sum to one, so an integral over a physical
//! tetrahedron `T` is `|T| * sum_q w_q f(x_q)`.

/// Barycentric points and normalised weights exact for polynomials up to `degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<[f64; 4]>,
    weights: Vec<f64>,
    degree: u32,
}

impl QuadratureRule {
    pub fn points(&self) -> &[[f64; 4]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 4], f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }

    /// Smallest built-in rule exact to at least `degree`.
    pub fn of_degree(degree: u32) -> Self {
        match degree {
            0 | 1 => Self::centroid(),
            2 => Self::four_point(),
            3..=5 => Self::fourteen_point(),
            d => Self::collapsed_gauss((d + 4) / 2),
        }
    }

    pub fn centroid() -> Self {
        Self {
            points: vec![[0.25; 4]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    /// Degree 2, four interior points.
    pub fn four_point() -> Self {
        let a = (5.0 - 5f64.sqrt()) / 20.0;
        let mut rule = Self {
            points: Vec::new(),
            weights: Vec::new(),
            degree: 2,
        };
        rule.push_s31(a, 0.25);
        rule
    }

    /// Degree 5 with 14 points and positive weights.
    pub fn fourteen_point() -> Self {
        let mut rule = Self {
            points: Vec::new(),
            weights: Vec::new(),
            degree: 5,
        };
        rule.push_s31(0.092_735_250_310_891_226_402_847_5, 0.073_493_043_116_361_949_544_963_3);
        rule.push_s31(0.310_885_919_263_300_609_797_345_7, 0.112_687_925_718_015_850_799_432_2);
        rule.push_s22(0.045_503_704_125_649_649_492_407_8, 0.042_546_020_777_081_466_438_069_0);
        rule
    }

    /// Conical product of `n`-point Gauss-Legendre rules through the collapsed
    /// map of the unit cube. Exact to degree `2n - 3`.
    pub fn collapsed_gauss(n: u32) -> Self {
        let n = n.max(2) as usize;
        let (nodes, w) = gauss_legendre_unit(n);
        let mut rule = Self {
            points: Vec::with_capacity(n * n * n),
            weights: Vec::with_capacity(n * n * n),
            degree: (2 * n - 3) as u32,
        };
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let (u, v, t) = (nodes[i], nodes[j], nodes[k]);
                    let x = u;
                    let y = (1.0 - u) * v;
                    let z = (1.0 - u) * (1.0 - v) * t;
                    let jac = (1.0 - u) * (1.0 - u) * (1.0 - v);
                    rule.points.push([1.0 - x - y - z, x, y, z]);
                    rule.weights.push(6.0 * w[i] * w[j] * w[k] * jac);
                }
            }
        }
        rule
    }

    fn push_s31(&mut self, a: f64, w: f64) {
        let b = 1.0 - 3.0 * a;
        for k in 0..4 {
            let mut p = [a; 4];
            p[k] = b;
            self.points.push(p);
            self.weights.push(w);
        }
    }

    fn push_s22(&mut self, a: f64, w: f64) {
        let b = 0.5 - a;
        for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            let mut p = [b; 4];
            p[i] = a;
            p[j] = a;
            self.points.push(p);
            self.weights.push(w);
        }
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub(crate) fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `P_n(x)` and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
