//! Block compressed-row matrices with 3x3 blocks, one block row per vertex.

use super::FemError;
use crate::mesh::{TetMesh, TET_EDGES};
use rayon::prelude::*;
use std::io::{self, Write};

pub type Block = [f64; 9];

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCsr {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    blocks: Vec<Block>,
}

impl BlockCsr {
    /// Zero matrix with the vertex-adjacency pattern of `mesh` (plus the diagonal).
    pub fn from_mesh(mesh: &TetMesh) -> Self {
        let n = mesh.num_vertices();
        let mut edges: Vec<u64> = Vec::with_capacity(6 * mesh.num_tets());
        for tet in mesh.tets() {
            for &(i, j) in &TET_EDGES {
                let (a, b) = (tet[i].min(tet[j]), tet[i].max(tet[j]));
                edges.push((u64::from(a) << 32) | u64::from(b));
            }
        }
        edges.par_sort_unstable();
        edges.dedup();
        let mut degree = vec![1usize; n];
        for &e in &edges {
            degree[(e >> 32) as usize] += 1;
            degree[(e & 0xffff_ffff) as usize] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        for d in &degree {
            row_ptr.push(row_ptr.last().unwrap() + d);
        }
        let mut cols = vec![0u32; row_ptr[n]];
        let mut fill: Vec<usize> = row_ptr[..n].to_vec();
        for (v, slot) in fill.iter_mut().enumerate() {
            cols[*slot] = v as u32;
            *slot += 1;
        }
        for &e in &edges {
            let (a, b) = ((e >> 32) as usize, (e & 0xffff_ffff) as usize);
            cols[fill[a]] = b as u32;
            fill[a] += 1;
            cols[fill[b]] = a as u32;
            fill[b] += 1;
        }
        drop(edges);
        for v in 0..n {
            cols[row_ptr[v]..row_ptr[v + 1]].sort_unstable();
        }
        let blocks = vec![[0.0; 9]; cols.len()];
        Self { row_ptr, cols, blocks }
    }

    /// Square matrix from `(row, col, block)` triplets; duplicates are summed in order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, Block)]) -> Self {
        let mut sorted: Vec<(usize, usize, usize)> =
            triplets.iter().enumerate().map(|(k, &(i, j, _))| (i, j, k)).collect();
        sorted.sort_unstable();
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::new();
        let mut blocks: Vec<Block> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, k) in &sorted {
            if last != Some((i, j)) {
                cols.push(j as u32);
                blocks.push([0.0; 9]);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
            let b = blocks.last_mut().unwrap();
            for (x, y) in b.iter_mut().zip(&triplets[k].2) {
                *x += y;
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { row_ptr, cols, blocks }
    }

    /// Number of block rows.
    pub fn block_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Number of scalar unknowns.
    pub fn dim(&self) -> usize {
        3 * self.block_rows()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[Block]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.blocks[r])
    }

    /// Position of block `(i, j)` in storage.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.cols[start..self.row_ptr[i + 1]]
            .binary_search(&(j as u32))
            .ok()
            .map(|k| start + k)
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&Block> {
        self.position(i, j).map(|p| &self.blocks[p])
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.row_ptr == other.row_ptr && self.cols == other.cols
    }

    /// `self += scale * other` for matrices with the same pattern.
    pub fn add_scaled(&mut self, scale: f64, other: &Self) -> Result<(), FemError> {
        if !self.same_pattern(other) {
            return Err(FemError::DimensionMismatch {
                expected: self.num_blocks(),
                actual: other.num_blocks(),
            });
        }
        self.blocks.par_iter_mut().zip(&other.blocks).for_each(|(a, b)| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        });
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.blocks.par_iter_mut().flatten().for_each(|x| *x *= factor);
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        y.par_chunks_mut(3).enumerate().for_each(|(i, yi)| {
            let (cols, blocks) = self.row(i);
            let mut acc = [0.0; 3];
            for (&j, b) in cols.iter().zip(blocks) {
                let xj = &x[3 * j as usize..3 * j as usize + 3];
                acc[0] += b[0] * xj[0] + b[1] * xj[1] + b[2] * xj[2];
                acc[1] += b[3] * xj[0] + b[4] * xj[1] + b[5] * xj[2];
                acc[2] += b[6] * xj[0] + b[7] * xj[1] + b[8] * xj[2];
            }
            yi.copy_from_slice(&acc);
        });
    }

    pub fn diagonal_blocks(&self) -> Vec<Block> {
        (0..self.block_rows())
            .map(|i| self.block(i, i).copied().unwrap_or([0.0; 9]))
            .collect()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let mut max_entry = 0.0f64;
        let mut max_diff = 0.0f64;
        for i in 0..self.block_rows() {
            let (cols, blocks) = self.row(i);
            for (&j, b) in cols.iter().zip(blocks) {
                let transpose = self.block(j as usize, i);
                for r in 0..3 {
                    for c in 0..3 {
                        let a = b[3 * r + c];
                        let at = transpose.map_or(0.0, |t| t[3 * c + r]);
                        max_entry = max_entry.max(a.abs());
                        max_diff = max_diff.max((a - at).abs());
                    }
                }
            }
        }
        if max_entry == 0.0 {
            0.0
        } else {
            max_diff / max_entry
        }
    }

    /// Dense copy, for small oracle checks.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut dense = nalgebra::DMatrix::zeros(n, n);
        for i in 0..self.block_rows() {
            let (cols, blocks) = self.row(i);
            for (&j, b) in cols.iter().zip(blocks) {
                for r in 0..3 {
                    for c in 0..3 {
                        dense[(3 * i + r, 3 * j as usize + c)] += b[3 * r + c];
                    }
                }
            }
        }
        dense
    }

    /// MatrixMarket coordinate dump of the scalar matrix.
    pub fn write_matrix_market<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let nonzeros = self.blocks.iter().flatten().filter(|x| **x != 0.0).count();
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.dim(), self.dim(), nonzeros)?;
        for i in 0..self.block_rows() {
            let (cols, blocks) = self.row(i);
            for (&j, b) in cols.iter().zip(blocks) {
                for r in 0..3 {
                    for c in 0..3 {
                        let a = b[3 * r + c];
                        if a != 0.0 {
                            writeln!(out, "{} {} {:.17e}", 3 * i + r + 1, 3 * j as usize + c + 1, a)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// MatrixMarket array dump of a vector.
pub fn write_vector_market<W: Write>(out: &mut W, v: &[f64]) -> io::Result<()> {
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} 1", v.len())?;
    for x in v {
        writeln!(out, "{x:.17e}")?;
    }
    Ok(())
}

/// Matrix together with its right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: BlockCsr,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn new(matrix: BlockCsr, rhs: Vec<f64>) -> Result<Self, FemError> {
        if rhs.len() != matrix.dim() {
            return Err(FemError::DimensionMismatch {
                expected: matrix.dim(),
                actual: rhs.len(),
            });
        }
        Ok(Self { matrix, rhs })
    }
}
