//! Small sparse linear-algebra kernels: CSR storage, a banded Cholesky
//! factorization for the SPD matrices produced on structured grids, and a
//! conjugate-gradient driver that works in an arbitrary inner product.

use crate::error::{Error, Result};

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from `(row, col, value)` triplets; duplicate
    /// entries are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < n && c < n);
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn identity_scaled(diag: &[f64]) -> Self {
        Self::from_triplets(diag.len(), diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        y
    }

    /// `y = A^T x`.
    pub fn mul_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate().take(self.n) {
            for (c, v) in self.row(i) {
                y[c] += v * xi;
            }
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Half bandwidth: `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// `alpha * self + beta * other` (same dimension).
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n {
            t.extend(self.row(i).map(|(j, v)| (i, j, alpha * v)));
            t.extend(other.row(i).map(|(j, v)| (i, j, beta * v)));
        }
        CsrMatrix::from_triplets(self.n, t)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

/// Cholesky factor `A = L L^T` of a symmetric positive definite band matrix.
///
/// Storage is row-wise over the band: `band[i * (bw + 1) + (j + bw - i)]`
/// holds `L[i][j]` for `i - bw <= j <= i`. The profile of a lexicographically
/// ordered structured grid equals its half bandwidth, so no fill-reducing
/// ordering is attempted.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // sum_{k} L[i][k] L[j][k] over the common band
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::Solver(format!(
                            "Cholesky pivot {s:e} at row {i}: matrix is not positive definite"
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.bw + 1) + (j + self.bw - i)]
    }

    /// Solves `L y = b` in place.
    pub fn forward_substitute(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let mut s = x[i];
            for (j, xj) in x.iter().enumerate().take(i).skip(j0) {
                s -= self.l(i, j) * xj;
            }
            x[i] = s / self.l(i, i);
        }
    }

    /// Solves `L^T x = y` in place.
    pub fn backward_substitute(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            let xi = x[i] / self.l(i, i);
            x[i] = xi;
            let j0 = i.saturating_sub(self.bw);
            for j in j0..i {
                x[j] -= self.l(i, j) * xi;
            }
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.forward_substitute(x);
        self.backward_substitute(x);
    }

    /// Solves `A^T x = b` in place as `(L L^T)^T = L L^T` applied in the
    /// transposed order of operations.
    pub fn solve_transpose_in_place(&self, x: &mut [f64]) {
        // A^T = (L^T)^T L^T, identical to A for a Cholesky factor; kept as a
        // separate entry point so adjoint code spells out the transposition.
        self.forward_substitute(x);
        self.backward_substitute(x);
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm after each iteration (entry 0 is the initial residual).
    pub residual_norms: Vec<f64>,
}

/// Conjugate gradients for `A x = b` where `A` is self-adjoint and positive
/// definite with respect to the inner product `dot`.
///
/// Stops when `||r|| <= tol * ||b||`. `x` holds the initial guess on entry.
/// `on_iterate` is called after every update with the iterate and residual.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    dot: impl Fn(&[f64], &[f64]) -> f64,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    mut on_iterate: impl FnMut(&[f64], &[f64]),
) -> CgOutcome {
    let n = b.len();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let b_norm = dot(b, b).sqrt();
    let mut rr = dot(&r, &r);
    let mut residual_norms = vec![rr.sqrt()];
    if b_norm == 0.0 || rr.sqrt() <= tol * b_norm {
        return CgOutcome { iterations: 0, converged: true, residual_norms };
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return CgOutcome { iterations: it - 1, converged: false, residual_norms };
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        on_iterate(x, &r);
        let rr_new = dot(&r, &r);
        residual_norms.push(rr_new.sqrt());
        if rr_new.sqrt() <= tol * b_norm {
            return CgOutcome { iterations: it, converged: true, residual_norms };
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    CgOutcome { iterations: max_iter, converged: false, residual_norms }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
