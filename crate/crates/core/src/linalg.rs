//! Dense linear algebra used throughout the crate.
//!
//! Everything here is deliberately small and dependency free: a row-major
//! [`Matrix`], a [`SymMatrix`] that keeps both triangles in sync, a Cholesky
//! factorization and a cyclic Jacobi eigensolver. Problem sizes in this crate
//! stay in the low hundreds, so dense `O(n^3)` kernels are fine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for calling a matrix "numerically PSD":
/// `min_eigenvalue >= -PSD_TOL * (1 + ||M||_inf)`.
pub const PSD_TOL: f64 = 1e-7;

/// Maximum number of cyclic Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Off-diagonal Frobenius norm target, relative to `||M||_F`.
const JACOBI_REL_TOL: f64 = 1e-11;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// y += a * x
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {}x{} matrix, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Appends a row; the row length must equal `cols`.
    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "row length mismatch");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// out = A^T y
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                axpy(a, src, dst);
            }
        }
        out
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        norm_inf(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense symmetric matrix. Writes go through [`SymMatrix::set`], which keeps
/// both triangles identical, so `get(i, j) == get(j, i)` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from a closure evaluated on the lower triangle only.
    pub fn from_lower_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds from full rows. The lower triangle is authoritative; the
    /// upper triangle must agree with it to within `1e-12 * (1 + |entry|)`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} of a {dim}x{dim} symmetric matrix has {} entries",
                    r.len()
                )));
            }
        }
        for i in 0..dim {
            for j in 0..i {
                let (l, u) = (rows[i][j], rows[j][i]);
                if (l - u).abs() > 1e-12 * (1.0 + l.abs()) {
                    return Err(Error::InvalidInstance(format!(
                        "matrix is not symmetric at ({i},{j}): {l} vs {u}"
                    )));
                }
            }
        }
        Ok(Self::from_lower_fn(dim, |i, j| rows[i][j]))
    }

    /// Symmetric part `(A + A^T) / 2` of a square matrix.
    pub fn symmetric_part(a: &Matrix) -> Self {
        assert_eq!(a.rows(), a.cols());
        Self::from_lower_fn(a.rows(), |i, j| 0.5 * (a.get(i, j) + a.get(j, i)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        if i == j {
            self.data[i * self.dim + i] += v;
        } else {
            self.data[i * self.dim + j] += v;
            self.data[j * self.dim + i] += v;
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix { rows: self.dim, cols: self.dim, data: self.data.clone() }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        (0..self.dim).map(|i| dot(self.row(i), x)).collect()
    }

    /// x^T M x
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymMatrix { dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// M - diag(d)
    pub fn minus_diag(&self, d: &[f64]) -> Self {
        let mut m = self.clone();
        for (i, &v) in d.iter().enumerate() {
            m.add_to(i, i, -v);
        }
        m
    }

    /// Principal submatrix on the given index set.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        SymMatrix::from_lower_fn(idx.len(), |i, j| self.get(idx[i], idx[j]))
    }

    pub fn max_abs(&self) -> f64 {
        norm_inf(&self.data)
    }
}

/// Lower-triangular Cholesky factor `L` with `L L^T = M`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.l[i * self.dim + j]
        }
    }

    pub fn factor_matrix(&self) -> Matrix {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// Solves `M x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s = b[i] - dot(row, &b[..i]);
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Dense LDL' of a quasi-definite matrix `[[K, E'], [E, 0]]` with dynamic
/// regularization of pivots of the wrong sign.
pub struct QuasiDefiniteLdl {
    dim: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl QuasiDefiniteLdl {

    /// Factors a row-major `dim x dim` matrix whose first `n_pos` pivots
    /// should be positive and the rest negative; pivots are pushed at least
    /// `delta` away from zero in the expected direction.
    pub fn factor(mut a: Vec<f64>, dim: usize, n_pos: usize, delta: f64) -> Self {
        // in-place right-looking LDL'
        let mut d = vec![0.0; dim];
        for j in 0..dim {
            let mut djj = a[j * dim + j];
            for k in 0..j {
                djj -= a[j * dim + k] * a[j * dim + k] * d[k];
            }
            if j < n_pos {
                if djj < delta {
                    djj = delta;
                }
            } else if djj > -delta {
                djj = -delta;
            }
            d[j] = djj;
            for i in j + 1..dim {
                let mut s = a[i * dim + j];
                for k in 0..j {
                    s -= a[i * dim + k] * a[j * dim + k] * d[k];
                }
                a[i * dim + j] = s / djj;
            }
        }
        QuasiDefiniteLdl { dim, l: a, d }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &b[..i]);
            b[i] -= s;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s;
        }
    }
}

/// Cholesky factorization. Fails when a pivot drops below
/// `1e-12 * (1 + trace(M) / dim)`.
pub fn cholesky(m: &SymMatrix) -> Result<Cholesky> {
    let n = m.dim();
    let threshold = 1e-12 * (1.0 + m.trace() / n.max(1) as f64);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > threshold) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(Cholesky { dim: n, l })
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.values.len();
        SymMatrix::from_lower_fn(n, |i, j| {
            (0..n).map(|k| self.vectors.get(i, k) * self.values[k] * self.vectors.get(j, k)).sum()
        })
    }
}

pub fn sym_eigen(m: &SymMatrix) -> Result<EigenDecomposition> {
    let n = m.dim();
    let mut a = m.data.clone();
    let mut v = identity_data(n);
    jacobi_in_place(n, &mut a, &mut v)?;
    Ok(sorted_decomposition(n, &a, v))
}

/// Jacobi eigendecomposition warm-started from an approximate eigenbasis.
///
/// `basis` holds an orthonormal matrix (row-major, columns are vectors). The
/// rotated matrix `B^T M B` is diagonalized and `basis` is overwritten with
/// the new eigenvectors, in ascending eigenvalue order. When `basis` is close
/// to the true eigenbasis only one or two sweeps are needed.
pub fn sym_eigen_warm(m: &SymMatrix, basis: &mut [f64]) -> Result<Vec<f64>> {
    let n = m.dim();
    debug_assert_eq!(basis.len(), n * n);
    // a = B^T M B
    let mb = mat_mul_raw(n, &m.data, basis);
    let mut a = mat_tr_mul_raw(n, basis, &mb);
    symmetrize_raw(n, &mut a);
    let mut w = identity_data(n);
    jacobi_in_place(n, &mut a, &mut w)?;
    let rotated = mat_mul_raw(n, basis, &w);
    let dec = sorted_decomposition(n, &a, rotated);
    basis.copy_from_slice(dec.vectors.as_slice());
    Ok(dec.values)
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    if m.dim() == 0 {
        return Ok(0.0);
    }
    Ok(sym_eigen(m)?.values[0])
}

/// `true` when `min_eigenvalue(m) >= -PSD_TOL * (1 + ||m||_inf)`.
pub fn is_numerically_psd(m: &SymMatrix) -> Result<bool> {
    Ok(min_eigenvalue(m)? >= -PSD_TOL * (1.0 + m.norm_inf()))
}

/// Projection onto the PSD cone in Frobenius norm: `V diag(max(λ, 0)) V^T`.
pub fn psd_project(m: &SymMatrix) -> Result<SymMatrix> {
    let dec = sym_eigen(m)?;
    Ok(clip_reconstruct(m, &dec.values, dec.vectors.as_slice()))
}

/// Rebuilds the PSD projection from an eigendecomposition, choosing whichever
/// of the positive or negative parts has fewer terms.
pub(crate) fn clip_reconstruct(m: &SymMatrix, values: &[f64], vectors: &[f64]) -> SymMatrix {
    let n = m.dim();
    let neg = values.iter().filter(|&&l| l < 0.0).count();
    if neg == 0 {
        return m.clone();
    }
    let mut out;
    if neg <= n - neg {
        out = m.clone();
        for (k, &lam) in values.iter().enumerate().filter(|(_, &l)| l < 0.0) {
            rank_one_update(&mut out, vectors, k, -lam);
        }
    } else {
        out = SymMatrix::zeros(n);
        for (k, &lam) in values.iter().enumerate().filter(|(_, &l)| l > 0.0) {
            rank_one_update(&mut out, vectors, k, lam);
        }
    }
    out
}

fn rank_one_update(out: &mut SymMatrix, vectors: &[f64], k: usize, scale: f64) {
    let n = out.dim();
    for i in 0..n {
        let vi = vectors[i * n + k] * scale;
        if vi == 0.0 {
            continue;
        }
        for j in 0..=i {
            let val = out.get(i, j) + vi * vectors[j * n + k];
            out.set(i, j, val);
        }
    }
}

fn identity_data(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    v
}

pub(crate) fn mat_mul_raw(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let (src, dst) = (&b[k * n..(k + 1) * n], &mut out[i * n..(i + 1) * n]);
            axpy(aik, src, dst);
        }
    }
    out
}

/// A^T B
pub(crate) fn mat_tr_mul_raw(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        for i in 0..n {
            let aki = a[k * n + i];
            if aki == 0.0 {
                continue;
            }
            let (src, dst) = (&b[k * n..(k + 1) * n], &mut out[i * n..(i + 1) * n]);
            axpy(aki, src, dst);
        }
    }
    out
}

fn symmetrize_raw(n: usize, a: &mut [f64]) {
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
    }
}

/// Cyclic Jacobi on a full symmetric row-major matrix, accumulating the
/// rotations into `v`.
fn jacobi_in_place(n: usize, a: &mut [f64], v: &mut [f64]) -> Result<()> {
    let fro = norm2(a);
    if fro == 0.0 || n < 2 {
        return Ok(());
    }
    let target = JACOBI_REL_TOL * fro;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= target {
            return Ok(());
        }
        // skip rotations whose element is negligible relative to the target
        let skip = target / (n as f64);
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= skip * 1e-3 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let nkp = c * akp - s * akq;
                    let nkq = s * akp + c * akq;
                    a[k * n + p] = nkp;
                    a[p * n + k] = nkp;
                    a[k * n + q] = nkq;
                    a[q * n + k] = nkq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::NonConvergence { sweeps: JACOBI_MAX_SWEEPS })
}

fn sorted_decomposition(n: usize, a: &[f64], v: Vec<f64>) -> EigenDecomposition {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v[i * n + order[j]]);
    EigenDecomposition { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let c = cholesky(&SymMatrix::identity(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn cholesky_two_by_two() {
        let c = cholesky(&sym(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        assert_eq!(c.get(0, 0), 2.0);
        assert_eq!(c.get(1, 0), 1.0);
        assert_eq!(c.get(1, 1), 2.0);
        assert_eq!(c.get(0, 1), 0.0);
        let x = c.solve(&[6.0, 7.0]);
        // [[4,2],[2,5]] x = [6,7] -> x = (1, 1)
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_indefinite() {
        let err = cholesky(&sym(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn eigen_examples() {
        let d = sym_eigen(&SymMatrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(d.values, vec![1.0, 3.0]);
        let d = sym_eigen(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((d.values[0] - 1.0).abs() < 1e-14);
        assert!((d.values[1] - 3.0).abs() < 1e-14);
        let d = sym_eigen(&SymMatrix::identity(4)).unwrap();
        assert_eq!(d.values, vec![1.0; 4]);
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert_eq!(min_eigenvalue(&SymMatrix::from_diag(&[5.0, -2.0, 0.0])).unwrap(), -2.0);
        assert_eq!(min_eigenvalue(&SymMatrix::identity(2)).unwrap(), 1.0);
        let l = min_eigenvalue(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((l - 1.0).abs() < 1e-14);
    }

    #[test]
    fn psd_project_examples() {
        let p = sym(&[&[2.0, 1.0], &[1.0, 2.0]]);
        assert!(psd_project(&p).unwrap().sub(&p).max_abs() < 1e-14);
        let q = psd_project(&SymMatrix::from_diag(&[2.0, -3.0])).unwrap();
        assert!(q.sub(&SymMatrix::from_diag(&[2.0, 0.0])).max_abs() < 1e-14);
        let r = psd_project(&sym(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert!(r.sub(&sym(&[&[0.5, 0.5], &[0.5, 0.5]])).max_abs() < 1e-14);
    }

    #[test]
    fn warm_start_matches_cold() {
        let m = sym(&[&[4.0, 1.0, 0.5], &[1.0, -2.0, 0.3], &[0.5, 0.3, 1.0]]);
        let cold = sym_eigen(&m).unwrap();
        let mut basis = cold.vectors.as_slice().to_vec();
        let perturbed = m.add(&SymMatrix::from_diag(&[1e-3, 0.0, -1e-3]));
        let warm = sym_eigen_warm(&perturbed, &mut basis).unwrap();
        let reference = sym_eigen(&perturbed).unwrap();
        for (a, b) in warm.iter().zip(&reference.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_rows_checked() {
        let err = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidInstance(_)));
    }
}
