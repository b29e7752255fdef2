//! Dense kernels: dot products, a blocked Cholesky factorization and
//! symmetric eigenvalues.
//!
//! Every dot product goes through [`dot`], whose summation order depends only
//! on the slice length. Results are therefore bit-reproducible regardless of
//! how work is batched or scheduled across threads.

use nalgebra::{DMatrix, SymmetricEigen};

const LANES: usize = 8;

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Lower-triangular matrix stored row by row (row `i` holds `i + 1` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLower {
    dim: usize,
    data: Vec<f64>,
}

impl PackedLower {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.data[start..start + i + 1]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.row(i)[j]
        }
    }

    /// `out = L z`.
    pub fn mul_vec(&self, z: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = dot(self.row(i), &z[..=i]);
        }
    }

    /// `outs[r] = L zs[r]` for a batch of vectors, streaming `L` once.
    pub fn mul_vecs(&self, zs: &[Vec<f64>], outs: &mut [Vec<f64>]) {
        for i in 0..self.dim {
            let row = self.row(i);
            for (z, out) in zs.iter().zip(outs.iter_mut()) {
                out[i] = dot(row, &z[..=i]);
            }
        }
    }
}

/// Failure of the factorization at a non-positive pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyFailure {
    pub index: usize,
    pub pivot: f64,
}

/// Cholesky factor of a symmetric matrix given by `entry(i, j)` for `j <= i`.
///
/// Row-oriented (Crout) factorization processed in row blocks so each
/// earlier row is streamed once per block. Every entry is computed by the
/// same expression as the unblocked algorithm.
pub fn cholesky<F>(dim: usize, entry: F) -> Result<PackedLower, CholeskyFailure>
where
    F: Fn(usize, usize) -> f64,
{
    const BLOCK: usize = 48;
    let mut data = vec![0.0; dim * (dim + 1) / 2];
    let off = |i: usize| i * (i + 1) / 2;
    let mut diag = vec![0.0; dim];
    let mut i0 = 0;
    while i0 < dim {
        let i1 = (i0 + BLOCK).min(dim);
        // Columns left of the block.
        for j in 0..i0 {
            let (head, tail) = data.split_at_mut(off(i0));
            let lj = &head[off(j)..off(j) + j];
            let ljj = diag[j];
            for i in i0..i1 {
                let base = off(i) - off(i0);
                let (done, rest) = tail[base..].split_at_mut(j);
                rest[0] = (entry(i, j) - dot(done, lj)) / ljj;
            }
        }
        // Triangle inside the block.
        for i in i0..i1 {
            for j in i0..=i {
                let s = {
                    let li = &data[off(i)..off(i) + j];
                    let lj = &data[off(j)..off(j) + j];
                    entry(i, j) - dot(li, lj)
                };
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(CholeskyFailure { index: i, pivot: s });
                    }
                    let d = s.sqrt();
                    diag[i] = d;
                    data[off(i) + i] = d;
                } else {
                    data[off(i) + j] = s / diag[j];
                }
            }
        }
        i0 = i1;
    }
    Ok(PackedLower { dim, data })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).first().copied().unwrap_or(f64::NAN)
}
