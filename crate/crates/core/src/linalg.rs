//! Minimal dense linear algebra: a row-major matrix, slice helpers and
//! Cholesky factorizations (including the growable factor used by the dual
//! active-set solver).

use alloc::vec;
use alloc::vec::Vec;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Mat {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data; panics if the length disagrees.
    pub fn from_vec(nrows: usize, ncols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "row-major data length mismatch");
        Mat { nrows, ncols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nrows = rows.len();
        let ncols = if nrows == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat { nrows, ncols, data }
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Mat::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self[(i, j)]).collect()
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.ncols);
        (0..self.nrows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T * v`.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            axpy(v[i], self.row(i), &mut out);
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.ncols, other.nrows);
        let mut out = Mat::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                axpy(a, orow, out_row);
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn add_to_diag(&mut self, eps: f64) {
        debug_assert!(self.is_square());
        for i in 0..self.nrows {
            self[(i, i)] += eps;
        }
    }

    pub fn trace(&self) -> f64 {
        debug_assert!(self.is_square());
        (0..self.nrows).map(|i| self[(i, i)]).sum()
    }

    /// Element-wise max norm.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    /// Symmetric rank-one update `self += w * v v^T` on the full matrix.
    pub fn syr(&mut self, w: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.ncols);
        for i in 0..self.nrows {
            let vi = w * v[i];
            if vi == 0.0 {
                continue;
            }
            let row = self.row_mut(i);
            axpy(vi, v, row);
        }
    }

    /// Scales every entry in place.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.ncols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `y += a * x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Eigenvalue range (min, max) of a small symmetric matrix by cyclic
/// Jacobi rotations.
pub fn sym_eigenvalue_range(a: &Mat, sweeps: usize) -> (f64, f64) {
    debug_assert!(a.is_square());
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..sweeps {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(m[(i, j)].abs());
            }
        }
        if off < 1e-14 * (1.0 + m.max_abs()) {
            break;
        }
        for i in 0..n {
            for j in i + 1..n {
                let apq = m[(i, j)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[(i, i)];
                let aqq = m[(j, j)];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mik = m[(i, k)];
                    let mjk = m[(j, k)];
                    m[(i, k)] = c * mik - s * mjk;
                    m[(j, k)] = s * mik + c * mjk;
                }
                for k in 0..n {
                    let mki = m[(k, i)];
                    let mkj = m[(k, j)];
                    m[(k, i)] = c * mki - s * mkj;
                    m[(k, j)] = s * mki + c * mkj;
                }
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        lo = lo.min(m[(i, i)]);
        hi = hi.max(m[(i, i)]);
    }
    (lo, hi)
}

/// Solves a small dense (possibly asymmetric) system by LU with partial
/// pivoting; `None` when the matrix is numerically singular.
pub fn solve_small(a: &Mat, rhs: &[f64]) -> Option<Vec<f64>> {
    debug_assert!(a.is_square());
    let n = a.nrows();
    debug_assert_eq!(rhs.len(), n);
    let mut lu = a.clone();
    let mut x = rhs.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if lu[(perm[r], col)].abs() > lu[(perm[pivot], col)].abs() {
                pivot = r;
            }
        }
        perm.swap(col, pivot);
        let pv = lu[(perm[col], col)];
        if pv.abs() < 1e-300 {
            return None;
        }
        for r in col + 1..n {
            let f = lu[(perm[r], col)] / pv;
            lu[(perm[r], col)] = f;
            for k in col + 1..n {
                let v = lu[(perm[col], k)];
                lu[(perm[r], k)] -= f * v;
            }
            x[perm[r]] -= f * x[perm[col]];
        }
    }
    let mut out = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = x[perm[col]];
        for k in col + 1..n {
            s -= lu[(perm[col], k)] * out[k];
        }
        out[col] = s / lu[(perm[col], col)];
    }
    Some(out)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    /// Returns `None` when the matrix is not numerically positive definite.
    pub fn factor(a: &Mat) -> Option<Self> {
        assert!(a.is_square());
        let n = a.nrows();
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let dj = libm::sqrt(d);
            l[(j, j)] = dj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / dj;
            }
        }
        Some(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A x = b` where `A = L L^T`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        // forward: L y = b
        for i in 0..n {
            let mut s = b[i];
            let row = self.l.row(i);
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Applies `A = L L^T` to a vector without forming `A`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        // w = L^T v
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for k in i..n {
                s += self.l[(k, i)] * v[k];
            }
            w[i] = s;
        }
        // out = L w
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            let row = self.l.row(i);
            for k in 0..=i {
                s += row[k] * w[k];
            }
            out[i] = s;
        }
        out
    }

    /// Cheap condition estimate from the squared ratio of the extreme
    /// factor diagonals.
    pub fn diag_condition(&self) -> f64 {
        let n = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for i in 0..n {
            let d = self.l[(i, i)];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo <= 0.0 {
            return f64::INFINITY;
        }
        (hi / lo) * (hi / lo)
    }

    /// Estimates the smallest eigenvalue of `A = L L^T` by inverse power
    /// iteration with a Rayleigh quotient.
    pub fn min_eigenvalue_estimate(&self, iterations: usize) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.01 * ((i % 7) as f64 - 3.0))
            .collect();
        let nv = norm2(&v);
        for x in &mut v {
            *x /= nv;
        }
        for _ in 0..iterations {
            self.solve_in_place(&mut v);
            let nv = norm2(&v);
            if !(nv > 0.0) || !nv.is_finite() {
                return 0.0;
            }
            for x in &mut v {
                *x /= nv;
            }
        }
        let av = self.apply(&v);
        dot(&v, &av) / dot(&v, &v)
    }
}

/// Cholesky factor that supports appending and deleting rows/columns of the
/// underlying matrix, used for the active-set working matrix of the dual
/// active-set solver.
#[derive(Debug, Clone)]
pub struct GrowableCholesky {
    cap: usize,
    k: usize,
    // cap x cap row-major buffer; lower triangle of the leading k x k block
    // holds the factor.
    l: Vec<f64>,
}

impl GrowableCholesky {
    pub fn new(cap: usize) -> Self {
        GrowableCholesky {
            cap,
            k: 0,
            l: vec![0.0; cap * cap],
        }
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.cap + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.l[i * self.cap + j] = v;
    }

    /// Appends the row `[col^T, diag]` to the factored matrix. Returns
    /// `false` (leaving the factor unchanged) when the extended matrix is
    /// not numerically positive definite.
    pub fn push(&mut self, col: &[f64], diag: f64) -> bool {
        let k = self.k;
        debug_assert_eq!(col.len(), k);
        debug_assert!(k < self.cap);
        // forward solve L y = col
        let mut y = vec![0.0; k];
        for i in 0..k {
            let mut s = col[i];
            for j in 0..i {
                s -= self.at(i, j) * y[j];
            }
            y[i] = s / self.at(i, i);
        }
        let d2 = diag - dot(&y, &y);
        if !(d2 > diag * 1e-14) || !d2.is_finite() {
            return false;
        }
        for (j, v) in y.iter().enumerate() {
            self.set(k, j, *v);
        }
        self.set(k, k, libm::sqrt(d2));
        self.k += 1;
        true
    }

    /// Deletes row/column `idx` of the factored matrix, re-triangularizing
    /// with Givens rotations.
    pub fn remove(&mut self, idx: usize) {
        let k = self.k;
        debug_assert!(idx < k);
        // Shift rows below idx up by one; the result is lower Hessenberg in
        // columns idx.. with one extra superdiagonal entry per row.
        for i in idx + 1..k {
            for j in 0..=i {
                let v = self.at(i, j);
                self.set(i - 1, j, v);
            }
        }
        let k = k - 1;
        self.k = k;
        // Zero the superdiagonal entries column by column.
        for j in idx..k {
            let a = self.at(j, j);
            let b = self.at(j, j + 1);
            if b == 0.0 {
                continue;
            }
            let r = libm::hypot(a, b);
            let (c, s) = (a / r, b / r);
            for i in j..k {
                let vj = self.at(i, j);
                let vj1 = self.at(i, j + 1);
                self.set(i, j, c * vj + s * vj1);
                self.set(i, j + 1, c * vj1 - s * vj);
            }
            // keep the diagonal positive
            if self.at(j, j) < 0.0 {
                for i in j..k {
                    let v = self.at(i, j);
                    self.set(i, j, -v);
                }
            }
        }
        // clear the dropped column
        for i in 0..k {
            self.set(i, k, 0.0);
        }
        for j in 0..=k.min(self.cap - 1) {
            self.set(k, j, 0.0);
        }
    }

    /// Solves `S x = rhs` for the current k x k factored matrix.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.k;
        debug_assert_eq!(rhs.len(), k);
        let mut x = rhs.to_vec();
        for i in 0..k {
            let mut s = x[i];
            for j in 0..i {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        for i in (0..k).rev() {
            let mut s = x[i];
            for j in i + 1..k {
                s -= self.at(j, i) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_spd(n: usize, seed: u64) -> Mat {
        let mut rng = crate::rng::SplitMix64::new(seed);
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = rng.next_f64_open01() - 0.5;
            }
        }
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] = dot(a.row(i), a.row(j));
            }
        }
        s.add_to_diag(0.5);
        s
    }

    #[test]
    fn cholesky_solves() {
        let s = random_spd(8, 1);
        let ch = Cholesky::factor(&s).unwrap();
        let b: Vec<f64> = (0..8).map(|i| i as f64 - 3.0).collect();
        let x = ch.solve(&b);
        let r = s.matvec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Mat::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(Cholesky::factor(&m).is_none());
    }

    #[test]
    fn min_eigenvalue_estimate_on_diagonal() {
        let s = Mat::diag(&[4.0, 0.25, 9.0, 1.0]);
        let ch = Cholesky::factor(&s).unwrap();
        let est = ch.min_eigenvalue_estimate(30);
        assert!((est - 0.25).abs() < 1e-8, "est = {est}");
    }

    #[test]
    fn growable_matches_batch_factor_under_updates() {
        let n = 12;
        let s = random_spd(n, 7);
        let mut rng = crate::rng::SplitMix64::new(99);
        // maintain a member list, push/remove randomly, compare solves
        let mut members: Vec<usize> = Vec::new();
        let mut g = GrowableCholesky::new(n);
        for step in 0..60 {
            let grow = members.is_empty() || (rng.next_u64() % 3 != 0 && members.len() < n);
            if grow {
                let cand = (0..n).find(|i| !members.contains(i)).unwrap();
                let col: Vec<f64> = members.iter().map(|&m| s[(m, cand)]).collect();
                assert!(g.push(&col, s[(cand, cand)]), "push failed at step {step}");
                members.push(cand);
            } else {
                let idx = (rng.next_u64() as usize) % members.len();
                g.remove(idx);
                members.remove(idx);
            }
            if members.is_empty() {
                continue;
            }
            // reference: direct factor of the submatrix
            let k = members.len();
            let mut sub = Mat::zeros(k, k);
            for (a, &ma) in members.iter().enumerate() {
                for (b, &mb) in members.iter().enumerate() {
                    sub[(a, b)] = s[(ma, mb)];
                }
            }
            let rhs: Vec<f64> = (0..k).map(|i| (i as f64) * 0.3 - 1.0).collect();
            let x_g = g.solve(&rhs);
            let x_ref = Cholesky::factor(&sub).unwrap().solve(&rhs);
            for (a, b) in x_g.iter().zip(&x_ref) {
                assert!((a - b).abs() < 1e-8, "step {step}: {a} vs {b}");
            }
        }
    }
}
