//! Symmetric block-banded matrices with stationary blocks.
//!
//! An `NT × NT` matrix whose `(t, s)` block of size `N × N` depends only on
//! `h = t - s` and vanishes for `|h| > L`. Only the blocks for `h = 0..=L`
//! are stored; block `(s, t)` is the transpose of block `(t, s)`.
//!
//! The banded Cholesky factor keeps the scalar bandwidth `(L + 1) N - 1`, so
//! quadratic forms in the inverse never materialize the (dense) inverse.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::dense::{max_asymmetry, symmetrize};
use crate::error::{Error, Result};

/// Systems up to this size use a dense eigensolver for the smallest eigenvalue.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockBandedMatrix {
    n_block: usize,
    n_time: usize,
    // blocks[h] is the (t, t - h) block
    blocks: Vec<DMatrix<f64>>,
}

impl BlockBandedMatrix {
    /// Stores `weights[h] * blocks[h]` for every lag. The lag-0 block must be
    /// symmetric to 1e-12 (relative) and is symmetrized exactly.
    pub fn assemble(blocks: &[DMatrix<f64>], weights: &[f64], n_time: usize) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::Dimension("at least the lag-0 block is required".into()));
        };
        let n = first.nrows();
        if n == 0 || blocks.iter().any(|b| b.nrows() != n || b.ncols() != n) {
            return Err(Error::Dimension("all lag blocks must be N x N".into()));
        }
        if weights.len() != blocks.len() {
            return Err(Error::Dimension(alloc::format!(
                "{} kernel weights for {} lag blocks",
                weights.len(),
                blocks.len()
            )));
        }
        if n_time == 0 || blocks.len() > n_time {
            return Err(Error::Dimension(alloc::format!(
                "band {} must be below T = {n_time}",
                blocks.len() - 1
            )));
        }
        let scale = first.amax().max(f64::MIN_POSITIVE);
        let asym = max_asymmetry(first);
        if asym > 1e-12 * scale {
            return Err(Error::NotSymmetric { max_asymmetry: asym });
        }
        let mut stored: Vec<DMatrix<f64>> = blocks.iter().zip(weights).map(|(b, w)| b * *w).collect();
        symmetrize(&mut stored[0]);
        Ok(Self {
            n_block: n,
            n_time,
            blocks: stored,
        })
    }

    /// Block-diagonal matrix with the same `N × N` block on every period.
    pub fn block_diagonal(block: DMatrix<f64>, n_time: usize) -> Result<Self> {
        Self::assemble(&[block], &[1.0], n_time)
    }

    pub fn identity(n_block: usize, n_time: usize) -> Self {
        Self {
            n_block,
            n_time,
            blocks: vec![DMatrix::identity(n_block, n_block)],
        }
    }

    pub fn n_block(&self) -> usize {
        self.n_block
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    /// Largest retained lag `L`.
    pub fn band(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.n_block * self.n_time
    }

    /// Stored (weighted) block for lag `h`, i.e. the `(t, t - h)` block.
    pub fn lag_block(&self, h: usize) -> &DMatrix<f64> {
        &self.blocks[h]
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Scalar bandwidth of the implied `NT × NT` matrix.
    pub fn scalar_bandwidth(&self) -> usize {
        (self.band() + 1) * self.n_block - 1
    }

    /// Entry `(row, col)` of the implied full matrix.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let n = self.n_block;
        let (t, i) = (row / n, row % n);
        let (s, j) = (col / n, col % n);
        if t >= s {
            self.blocks.get(t - s).map_or(0.0, |b| b[(i, j)])
        } else {
            self.blocks.get(s - t).map_or(0.0, |b| b[(j, i)])
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let nt = self.dim();
        DMatrix::from_fn(nt, nt, |r, c| self.get(r, c))
    }

    /// `self * v` for an `NT × k` right-hand side.
    pub fn mul(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (n, t_len) = (self.n_block, self.n_time);
        if v.nrows() != n * t_len {
            return Err(Error::Dimension(alloc::format!(
                "right-hand side has {} rows, expected {}",
                v.nrows(),
                n * t_len
            )));
        }
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for t in 0..t_len {
            for (h, b) in self.blocks.iter().enumerate() {
                if h <= t {
                    let src = v.rows((t - h) * n, n);
                    let mut dst = out.rows_mut(t * n, n);
                    dst.gemm(1.0, b, &src, 1.0);
                }
                if h > 0 && t + h < t_len {
                    let src = v.rows((t + h) * n, n);
                    let mut dst = out.rows_mut(t * n, n);
                    dst.gemm_tr(1.0, b, &src, 1.0);
                }
            }
        }
        Ok(out)
    }

    /// `max_t sum_s ||block(t, s)||_2`, an upper bound on the spectral norm.
    pub fn block_norm_bound(&self) -> f64 {
        let norms: Vec<f64> = self.blocks.iter().map(op_norm).collect();
        let l = self.band();
        (0..self.n_time)
            .map(|t| {
                let below: f64 = norms.iter().take(l.min(t) + 1).sum();
                let above: f64 = norms.iter().skip(1).take(l.min(self.n_time - 1 - t)).sum();
                below + above
            })
            .fold(0.0, f64::max)
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        BandedCholesky::factor(self, 0.0)
    }

    /// Smallest eigenvalue: exact dense eigenvalues up to
    /// [`DENSE_EIGEN_LIMIT`], otherwise bisection on the shift at which a
    /// banded Cholesky of `self - shift * I` first fails.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        if self.dim() <= DENSE_EIGEN_LIMIT {
            Ok(dense_min_eigenvalue(&self.to_dense()))
        } else {
            self.min_eigenvalue_bisection(1e-6)
        }
    }

    /// Bisection on the Cholesky inertia test, bracketed by the block norm
    /// bound, to relative width `rel_tol`.
    pub fn min_eigenvalue_bisection(&self, rel_tol: f64) -> Result<f64> {
        const MAX_ITER: usize = 200;
        let bound = self.block_norm_bound();
        if bound == 0.0 {
            return Ok(0.0);
        }
        // lo: shift where self - lo I is PD; hi: where it is not.
        let mut lo = -bound * (1.0 + 1e-9) - f64::MIN_POSITIVE;
        let mut hi = bound * (1.0 + 1e-9) + f64::MIN_POSITIVE;
        for _ in 0..MAX_ITER {
            let width = hi - lo;
            if width <= rel_tol * lo.abs().max(hi.abs()) || width <= 1e-300 {
                return Ok(0.5 * (lo + hi));
            }
            let mid = 0.5 * (lo + hi);
            match BandedCholesky::factor(self, mid) {
                Ok(_) => lo = mid,
                Err(_) => hi = mid,
            }
        }
        Err(Error::NonConvergence {
            lower: lo,
            upper: hi,
            iterations: MAX_ITER,
        })
    }

    /// Debug dump: `b"PFGLSBLK"`, then `n_block`, `n_time`, `band` as
    /// little-endian `u64`, then the blocks lag-major, each row-major, as
    /// little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n_block;
        let mut out = Vec::with_capacity(32 + 8 * n * n * self.blocks.len());
        out.extend_from_slice(BLOCK_DUMP_MAGIC);
        for v in [n, self.n_time, self.band()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for b in &self.blocks {
            for i in 0..n {
                for j in 0..n {
                    out.extend_from_slice(&b[(i, j)].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Dimension(alloc::format!("block dump: {m}"));
        if bytes.len() < 32 || &bytes[..8] != BLOCK_DUMP_MAGIC {
            return Err(bad("missing PFGLSBLK header"));
        }
        let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap()) as usize;
        let (n, t_len, band) = (word(0), word(1), word(2));
        let count = n
            .checked_mul(n)
            .and_then(|v| v.checked_mul(band + 1))
            .ok_or_else(|| bad("header overflow"))?;
        if bytes.len() != 32 + 8 * count {
            return Err(bad("payload length does not match header"));
        }
        let mut blocks = Vec::with_capacity(band + 1);
        let mut at = 32;
        for _ in 0..=band {
            let mut b = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    b[(i, j)] = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                    at += 8;
                }
            }
            blocks.push(b);
        }
        let ones = vec![1.0; band + 1];
        Self::assemble(&blocks, &ones, t_len)
    }
}

pub const BLOCK_DUMP_MAGIC: &[u8; 8] = b"PFGLSBLK";

fn op_norm(b: &DMatrix<f64>) -> f64 {
    if b.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    b.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Block-row norm bound for an arbitrary symmetric matrix partitioned into
/// `block × block` tiles: `max_i sum_j ||A_ij||_2`.
pub fn block_norm_bound_dense(m: &DMatrix<f64>, block: usize) -> Result<f64> {
    if block == 0 || m.nrows() != m.ncols() || m.nrows() % block != 0 {
        return Err(Error::Dimension("matrix must be square and tile evenly".into()));
    }
    let nb = m.nrows() / block;
    let mut best = 0.0f64;
    for i in 0..nb {
        let mut row = 0.0;
        for j in 0..nb {
            row += op_norm(&m.view((i * block, j * block), (block, block)).into_owned());
        }
        best = best.max(row);
    }
    Ok(best)
}

fn dense_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Lower Cholesky factor of a [`BlockBandedMatrix`] in scalar band storage.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    dim: usize,
    bandwidth: usize,
    // row r holds columns r - bandwidth ..= r at offsets 0 ..= bandwidth
    lower: Vec<f64>,
    log_det: f64,
}

impl BandedCholesky {
    /// Factors `m - shift * I`.
    pub fn factor(m: &BlockBandedMatrix, shift: f64) -> Result<Self> {
        let dim = m.dim();
        let p = m.scalar_bandwidth().min(dim.saturating_sub(1));
        let w = p + 1;
        let mut lower = vec![0.0; dim * w];
        let mut log_det = 0.0;
        for r in 0..dim {
            let c0 = r.saturating_sub(p);
            for c in c0..=r {
                let mut s = m.get(r, c);
                if c == r {
                    s -= shift;
                }
                // Overlap of rows r and c within the band: columns k0..c.
                let k0 = c0.max(c.saturating_sub(p));
                if k0 < c {
                    let row_r = &lower[r * w + (k0 + p - r)..r * w + (c + p - r)];
                    let row_c = &lower[c * w + (k0 + p - c)..c * w + p];
                    s -= dot(row_r, row_c);
                }
                if c == r {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { row: r, pivot: s });
                    }
                    let d = libm::sqrt(s);
                    lower[r * w + p] = d;
                    log_det += 2.0 * libm::log(d);
                } else {
                    lower[r * w + (c + p - r)] = s / lower[c * w + p];
                }
            }
        }
        Ok(Self {
            dim,
            bandwidth: p,
            lower,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Entry `(r, c)` of the lower factor.
    pub fn factor_entry(&self, r: usize, c: usize) -> f64 {
        if c > r || r - c > self.bandwidth {
            0.0
        } else {
            self.lower[r * (self.bandwidth + 1) + (c + self.bandwidth - r)]
        }
    }

    pub fn factor_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| self.factor_entry(r, c))
    }

    /// Solves `(L L') x = rhs` column by column.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim {
            return Err(Error::Dimension(alloc::format!(
                "right-hand side has {} rows, expected {}",
                rhs.nrows(),
                self.dim
            )));
        }
        let mut out = rhs.clone();
        for mut col in out.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        Ok(out)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let p = self.bandwidth;
        let w = p + 1;
        // L y = b
        for r in 0..self.dim {
            let k0 = r.saturating_sub(p);
            let row = &self.lower[r * w + (k0 + p - r)..r * w + p];
            let s = x[r] - dot(row, &x[k0..r]);
            x[r] = s / self.lower[r * w + p];
        }
        // L' x = y, eliminating one column of L' per step.
        for r in (0..self.dim).rev() {
            let xr = x[r] / self.lower[r * w + p];
            x[r] = xr;
            let k0 = r.saturating_sub(p);
            let row = &self.lower[r * w + (k0 + p - r)..r * w + p];
            for (xk, l) in x[k0..r].iter_mut().zip(row) {
                *xk -= l * xr;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Symmetric square root through the eigendecomposition. Eigenvalues down
/// to `-1e-10` (relative to the largest) are clipped to zero.
pub fn sym_sqrt_dense(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension("square matrix required".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = max_asymmetry(m);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric { max_asymmetry: asym });
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-10 * top.max(1.0) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: *v });
        }
        *v = libm::sqrt(v.max(0.0));
    }
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&roots) * q.transpose();
    symmetrize(&mut out);
    Ok(out)
}
