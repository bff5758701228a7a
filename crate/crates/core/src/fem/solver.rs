//! Krylov solvers on block CSR matrices: preconditioned conjugate gradients
//! and BiCGStab(l).
//!
//! Inner products are reduced over fixed-size chunks in index order, so the
//! iterates do not depend on the number of threads.

use super::sparse::{Block, BlockCsr};
use super::FemError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const REDUCE_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KrylovMethod {
    Cg,
    /// BiCGStab(l) with the given number of minimal-residual steps per cycle.
    BiCgStab(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preconditioner {
    None,
    /// Scalar diagonal scaling.
    Jacobi,
    /// Inverse of each vertex's 3x3 diagonal block.
    BlockJacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: KrylovMethod,
    pub preconditioner: Preconditioner,
    /// Target for the true relative residual `|b - Ax| / |b|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: KrylovMethod::Cg,
            preconditioner: Preconditioner::None,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub matvecs: usize,
    /// True relative residual of the returned iterate.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// `y = x + beta * y`.
fn xpby(x: &[f64], beta: f64, y: &mut [f64]) {
    y.par_iter_mut().zip(x).for_each(|(yi, xi)| *yi = xi + beta * *yi);
}

enum Apply {
    Identity,
    Scalar(Vec<f64>),
    Blocks(Vec<Block>),
}

impl Apply {
    fn new(matrix: &BlockCsr, kind: Preconditioner) -> Self {
        let diag = matrix.diagonal_blocks();
        match kind {
            Preconditioner::None => Self::Identity,
            Preconditioner::Jacobi => Self::Scalar(
                diag.iter()
                    .flat_map(|b| [b[0], b[4], b[8]])
                    .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
                    .collect(),
            ),
            Preconditioner::BlockJacobi => Self::Blocks(
                diag.iter()
                    .map(|b| {
                        nalgebra::Matrix3::from_row_slice(b)
                            .try_inverse()
                            .map(|inv| {
                                let mut out = [0.0; 9];
                                for r in 0..3 {
                                    for c in 0..3 {
                                        out[3 * r + c] = inv[(r, c)];
                                    }
                                }
                                out
                            })
                            .unwrap_or([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
                    })
                    .collect(),
            ),
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Self::Identity => z.copy_from_slice(r),
            Self::Scalar(d) => z
                .par_iter_mut()
                .zip(r)
                .zip(d)
                .for_each(|((zi, ri), di)| *zi = ri * di),
            Self::Blocks(b) => z
                .par_chunks_mut(3)
                .zip(r.par_chunks(3))
                .zip(b)
                .for_each(|((zi, ri), m)| {
                    for k in 0..3 {
                        zi[k] = m[3 * k] * ri[0] + m[3 * k + 1] * ri[1] + m[3 * k + 2] * ri[2];
                    }
                }),
        }
    }
}

fn residual(matrix: &BlockCsr, b: &[f64], x: &[f64], r: &mut [f64]) {
    matrix.mul_vec(x, r);
    r.par_iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
}

/// Solves `A x = b` from the initial guess `x0` (zero if absent).
pub fn solve_krylov(
    matrix: &BlockCsr,
    b: &[f64],
    x0: Option<&[f64]>,
    options: &SolverOptions,
) -> Result<(Vec<f64>, SolveStats), FemError> {
    let n = matrix.dim();
    if b.len() != n {
        return Err(FemError::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        Some(x0) => {
            return Err(FemError::DimensionMismatch {
                expected: n,
                actual: x0.len(),
            })
        }
        None => vec![0.0; n],
    };
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                matvecs: 0,
                residual: 0.0,
            },
        ));
    }
    let precond = Apply::new(matrix, options.preconditioner);
    let mut stats = SolveStats {
        iterations: 0,
        matvecs: 0,
        residual: f64::INFINITY,
    };
    // Restarts guard against drift between the recursive and the true residual.
    let method = match options.method {
        KrylovMethod::Cg => "CG",
        KrylovMethod::BiCgStab(_) => "BiCGStab(l)",
    };
    for _ in 0..8 {
        match options.method {
            KrylovMethod::Cg => pcg(matrix, b, &mut x, &precond, b_norm, options, &mut stats)?,
            KrylovMethod::BiCgStab(l) => bicgstab_l(matrix, b, &mut x, &precond, b_norm, l.max(1), options, &mut stats)?,
        }
        let mut r = vec![0.0; n];
        residual(matrix, b, &x, &mut r);
        stats.matvecs += 1;
        stats.residual = norm(&r) / b_norm;
        log::debug!("{method}: {} iterations, true residual {:.3e}", stats.iterations, stats.residual);
        if stats.residual <= options.tol {
            return Ok((x, stats));
        }
        if stats.iterations >= options.max_iter {
            break;
        }
    }
    Err(FemError::NonConvergence {
        method,
        iterations: stats.iterations,
        residual: stats.residual,
    })
}

fn pcg(
    matrix: &BlockCsr,
    b: &[f64],
    x: &mut [f64],
    precond: &Apply,
    b_norm: f64,
    options: &SolverOptions,
    stats: &mut SolveStats,
) -> Result<(), FemError> {
    let n = b.len();
    let mut r = vec![0.0; n];
    residual(matrix, b, x, &mut r);
    stats.matvecs += 1;
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    // Stop the recursion a little below the target so the true residual passes.
    let target = 0.5 * options.tol * b_norm;
    while stats.iterations < options.max_iter {
        if norm(&r) <= target {
            return Ok(());
        }
        matrix.mul_vec(&p, &mut q);
        stats.matvecs += 1;
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(FemError::Breakdown {
                method: "CG",
                iteration: stats.iterations,
            });
        }
        let alpha = rz / pq;
        axpy(alpha, &p, x);
        axpy(-alpha, &q, &mut r);
        precond.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        xpby(&z, rz_next / rz, &mut p);
        rz = rz_next;
        stats.iterations += 1;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bicgstab_l(
    matrix: &BlockCsr,
    b: &[f64],
    x: &mut [f64],
    precond: &Apply,
    b_norm: f64,
    l: usize,
    options: &SolverOptions,
    stats: &mut SolveStats,
) -> Result<(), FemError> {
    const NAME: &str = "BiCGStab(l)";
    let n = b.len();
    let mut tmp = vec![0.0; n];
    // Right preconditioning: iterate on y with x = x0 + M^-1 y.
    let mut apply_op = |v: &[f64], out: &mut [f64], stats: &mut SolveStats| {
        precond.apply(v, &mut tmp);
        matrix.mul_vec(&tmp, out);
        stats.matvecs += 1;
    };
    let mut r0 = vec![0.0; n];
    residual(matrix, b, x, &mut r0);
    stats.matvecs += 1;
    let shadow = r0.clone();
    let mut rs: Vec<Vec<f64>> = vec![vec![0.0; n]; l + 1];
    let mut us: Vec<Vec<f64>> = vec![vec![0.0; n]; l + 1];
    rs[0] = r0;
    let mut y = vec![0.0; n];
    let (mut rho0, mut alpha, mut omega) = (1.0, 0.0, 1.0);
    let target = 0.5 * options.tol * b_norm;
    let mut tau = vec![vec![0.0; l + 1]; l + 1];
    let mut sigma = vec![0.0; l + 1];
    let mut gamma = vec![0.0; l + 1];
    let mut gamma1 = vec![0.0; l + 1];
    let mut gamma2 = vec![0.0; l + 1];

    let mut converged = false;
    while stats.iterations < options.max_iter {
        if norm(&rs[0]) <= target {
            break;
        }
        rho0 *= -omega;
        for j in 0..l {
            let rho1 = dot(&rs[j], &shadow);
            if rho0 == 0.0 {
                return Err(FemError::Breakdown {
                    method: NAME,
                    iteration: stats.iterations,
                });
            }
            let beta = alpha * rho1 / rho0;
            rho0 = rho1;
            for i in 0..=j {
                let (u, r) = (&mut us[i], &rs[i]);
                u.par_iter_mut().zip(r).for_each(|(ui, ri)| *ui = ri - beta * *ui);
            }
            let (head, tail) = us.split_at_mut(j + 1);
            apply_op(&head[j], &mut tail[0], stats);
            let g = dot(&us[j + 1], &shadow);
            if g == 0.0 {
                return Err(FemError::Breakdown {
                    method: NAME,
                    iteration: stats.iterations,
                });
            }
            alpha = rho0 / g;
            for i in 0..=j {
                let (r, u) = (&mut rs[i], &us[i + 1]);
                axpy(-alpha, u, r);
            }
            let (head, tail) = rs.split_at_mut(j + 1);
            apply_op(&head[j], &mut tail[0], stats);
            axpy(alpha, &us[0], &mut y);
            stats.iterations += 1;
            if norm(&rs[0]) <= target {
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
        // Minimal-residual polynomial step (modified Gram-Schmidt).
        for j in 1..=l {
            for i in 1..j {
                let t = dot(&rs[j], &rs[i]) / sigma[i];
                tau[i][j] = t;
                let (lo, hi) = rs.split_at_mut(j);
                axpy(-t, &lo[i], &mut hi[0]);
            }
            sigma[j] = dot(&rs[j], &rs[j]);
            if sigma[j] == 0.0 {
                return Err(FemError::Breakdown {
                    method: NAME,
                    iteration: stats.iterations,
                });
            }
            gamma1[j] = dot(&rs[0], &rs[j]) / sigma[j];
        }
        gamma[l] = gamma1[l];
        omega = gamma[l];
        for j in (1..l).rev() {
            gamma[j] = gamma1[j] - ((j + 1)..=l).map(|i| tau[j][i] * gamma[i]).sum::<f64>();
        }
        for j in 1..l {
            gamma2[j] = gamma[j + 1] + ((j + 1)..l).map(|i| tau[j][i] * gamma[i + 1]).sum::<f64>();
        }
        axpy(gamma[1], &rs[0], &mut y);
        {
            let (lo, hi) = rs.split_at_mut(l);
            axpy(-gamma1[l], &hi[0], &mut lo[0]);
        }
        {
            let (lo, hi) = us.split_at_mut(l);
            axpy(-gamma[l], &hi[0], &mut lo[0]);
        }
        for j in 1..l {
            let (lo, hi) = us.split_at_mut(j);
            axpy(-gamma[j], &hi[0], &mut lo[0]);
            axpy(gamma2[j], &rs[j], &mut y);
            let (lo, hi) = rs.split_at_mut(j);
            axpy(-gamma1[j], &hi[0], &mut lo[0]);
        }
        if !omega.is_finite() || omega == 0.0 {
            return Err(FemError::Breakdown {
                method: NAME,
                iteration: stats.iterations,
            });
        }
    }
    let mut dx = vec![0.0; n];
    precond.apply(&y, &mut dx);
    axpy(1.0, &dx, x);
    Ok(())
}
