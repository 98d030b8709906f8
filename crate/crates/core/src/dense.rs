//! Dense complex linear algebra kernels.
//!
//! Column-major complex matrices together with the factorizations the
//! rank-structured solvers are assembled from: Householder QR (plain and
//! column-pivoted), triangular solves, least-squares and right-pseudoinverse
//! solves, and a one-sided Jacobi SVD for small blocks.
//!
//! Everything here is deterministic: no randomized pivoting, no
//! parallelism-dependent reduction orders.

use thiserror::Error;

pub type C64 = num_complex::Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Errors from dense factorizations and solves.
#[derive(Debug, Error)]
pub enum DenseError {
    /// A triangular solve met a diagonal entry below the rank threshold.
    #[error("rank-deficient triangular factor: |diag[{index}]| = {value:.3e} < {threshold:.3e}")]
    RankDeficient {
        index: usize,
        value: f64,
        threshold: f64,
    },
    /// Dimensions of the operands do not match the operation.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Column-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMat {
    nrows: usize,
    ncols: usize,
    data: Vec<C64>,
}

/// The default matrix is empty (`0 x 0`).
impl Default for CMat {
    fn default() -> Self {
        CMat::zeros(0, 0)
    }
}

impl std::fmt::Debug for CMat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CMat({}x{})", self.nrows, self.ncols)
    }
}

impl CMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CMat {
            nrows,
            ncols,
            data: vec![ZERO; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = ONE;
        }
        m
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = CMat::zeros(nrows, ncols);
        for j in 0..ncols {
            for i in 0..nrows {
                m.data[i + j * nrows] = f(i, j);
            }
        }
        m
    }

    /// Builds a single-column matrix borrowing the vector's contents.
    pub fn from_col(v: &[C64]) -> Self {
        CMat {
            nrows: v.len(),
            ncols: 1,
            data: v.to_vec(),
        }
    }

    pub fn from_parts(nrows: usize, ncols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), nrows * ncols);
        CMat {
            nrows,
            ncols,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn is_empty(&self) -> bool {
        self.nrows == 0 || self.ncols == 0
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.data[i + j * self.nrows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.data[i + j * self.nrows] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[C64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [C64] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    /// Copy of the block with rows `r0..r1` and columns `c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> CMat {
        assert!(r0 <= r1 && r1 <= self.nrows && c0 <= c1 && c1 <= self.ncols);
        let mut out = CMat::zeros(r1 - r0, c1 - c0);
        for j in c0..c1 {
            let src = &self.col(j)[r0..r1];
            out.col_mut(j - c0).copy_from_slice(src);
        }
        out
    }

    /// Writes `b` into the block whose top-left corner is `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, b: &CMat) {
        assert!(r0 + b.nrows <= self.nrows && c0 + b.ncols <= self.ncols);
        for j in 0..b.ncols {
            let dst_col = self.col_mut(c0 + j);
            dst_col[r0..r0 + b.nrows].copy_from_slice(b.col(j));
        }
    }

    /// Stacks `top` above `bottom`; both must have the same column count.
    pub fn vstack(top: &CMat, bottom: &CMat) -> CMat {
        assert_eq!(top.ncols, bottom.ncols);
        let mut out = CMat::zeros(top.nrows + bottom.nrows, top.ncols);
        out.set_block(0, 0, top);
        out.set_block(top.nrows, 0, bottom);
        out
    }

    /// Places `left` beside `right`; both must have the same row count.
    pub fn hstack(left: &CMat, right: &CMat) -> CMat {
        assert_eq!(left.nrows, right.nrows);
        let mut out = CMat::zeros(left.nrows, left.ncols + right.ncols);
        out.set_block(0, 0, left);
        out.set_block(0, left.ncols, right);
        out
    }

    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.ncols, self.nrows);
        for j in 0..self.ncols {
            for i in 0..self.nrows {
                out.data[j + i * self.ncols] = self.data[i + j * self.nrows].conj();
            }
        }
        out
    }

    pub fn scale(&mut self, alpha: C64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: C64, other: &CMat) {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        for (d, s) in self.data.iter_mut().zip(other.data.iter()) {
            *d += alpha * s;
        }
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `A * B`.
    pub fn mul(&self, b: &CMat) -> CMat {
        assert_eq!(
            self.ncols, b.nrows,
            "mul: {}x{} * {}x{}",
            self.nrows, self.ncols, b.nrows, b.ncols
        );
        let mut c = CMat::zeros(self.nrows, b.ncols);
        c.add_mul(self, b, ONE);
        c
    }

    /// `self += alpha * A * B`, the accumulation form used in hot paths.
    pub fn add_mul(&mut self, a: &CMat, b: &CMat, alpha: C64) {
        assert_eq!(a.ncols, b.nrows);
        assert_eq!(self.nrows, a.nrows);
        assert_eq!(self.ncols, b.ncols);
        let m = a.nrows;
        if m == 0 {
            return;
        }
        for j in 0..b.ncols {
            let bcol = b.col(j);
            let ccol = self.col_mut(j);
            let mut k = 0;
            // Two columns of A per pass so each load of ccol serves two FMAs.
            while k + 1 < a.ncols {
                let s0 = alpha * bcol[k];
                let s1 = alpha * bcol[k + 1];
                if s0 != ZERO || s1 != ZERO {
                    let a0 = a.col(k);
                    let a1 = a.col(k + 1);
                    for i in 0..m {
                        ccol[i] += s0 * a0[i] + s1 * a1[i];
                    }
                }
                k += 2;
            }
            if k < a.ncols {
                let s0 = alpha * bcol[k];
                if s0 != ZERO {
                    let a0 = a.col(k);
                    for i in 0..m {
                        ccol[i] += s0 * a0[i];
                    }
                }
            }
        }
    }

    /// `A^H * B`.
    pub fn adjoint_mul(&self, b: &CMat) -> CMat {
        assert_eq!(
            self.nrows, b.nrows,
            "adjoint_mul: ({}x{})^H * {}x{}",
            self.nrows, self.ncols, b.nrows, b.ncols
        );
        let mut c = CMat::zeros(self.ncols, b.ncols);
        for j in 0..b.ncols {
            let bcol = b.col(j);
            let ccol = c.col_mut(j);
            for (p, cp) in ccol.iter_mut().enumerate() {
                *cp = dot(self.col(p), bcol);
            }
        }
        c
    }

    /// `A * B^H`.
    pub fn mul_adjoint(&self, b: &CMat) -> CMat {
        assert_eq!(
            self.ncols, b.ncols,
            "mul_adjoint: {}x{} * ({}x{})^H",
            self.nrows, self.ncols, b.nrows, b.ncols
        );
        let m = self.nrows;
        let mut c = CMat::zeros(m, b.nrows);
        for k in 0..self.ncols {
            let acol = self.col(k);
            for j in 0..b.nrows {
                let s = b.get(j, k).conj();
                if s != ZERO {
                    let ccol = c.col_mut(j);
                    for i in 0..m {
                        ccol[i] += s * acol[i];
                    }
                }
            }
        }
        c
    }

    /// `A * x` for a vector.
    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.ncols, x.len());
        let mut y = vec![ZERO; self.nrows];
        for (k, &xk) in x.iter().enumerate() {
            if xk != ZERO {
                axpy(&mut y, xk, self.col(k));
            }
        }
        y
    }

    /// `A^H * x` for a vector.
    pub fn adjoint_matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.nrows, x.len());
        (0..self.ncols).map(|p| dot(self.col(p), x)).collect()
    }

    /// Reverses the row order in place.
    pub fn flip_rows(&mut self) {
        let m = self.nrows;
        for j in 0..self.ncols {
            self.col_mut(j)[..m].reverse();
        }
    }
}

/// Conjugated dot product `x^H y`.
#[inline]
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = ZERO;
    for (a, b) in x.iter().zip(y.iter()) {
        acc += a.conj() * b;
    }
    acc
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

pub fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Householder QR in packed form: R on and above the diagonal, reflector
/// tails below it. Reflector `j` is `I - tau[j] v v^H` with `v[j] = 1`.
/// The default value is the factorization of the empty matrix.
#[derive(Debug, Default)]
pub struct QrFactors {
    packed: CMat,
    taus: Vec<C64>,
}

impl QrFactors {
    pub fn nrows(&self) -> usize {
        self.packed.nrows
    }

    pub fn ncols(&self) -> usize {
        self.packed.ncols
    }

    pub fn nrefl(&self) -> usize {
        self.taus.len()
    }

    /// Absolute diagonal of R, in factorization order.
    pub fn r_diag_abs(&self) -> Vec<f64> {
        (0..self.nrefl())
            .map(|j| self.packed.get(j, j).norm())
            .collect()
    }

    /// Copy of the leading `rows x cols` block of R (upper trapezoid).
    pub fn r_block(&self, rows: usize, cols: usize) -> CMat {
        assert!(rows <= self.packed.nrows && cols <= self.packed.ncols);
        let mut r = CMat::zeros(rows, cols);
        for j in 0..cols {
            let top = (j + 1).min(rows);
            for i in 0..top {
                r.set(i, j, self.packed.get(i, j));
            }
        }
        r
    }

    /// Applies `Q^H` to `c` in place.
    pub fn apply_qh(&self, c: &mut CMat) {
        assert_eq!(c.nrows, self.packed.nrows);
        for j in 0..self.nrefl() {
            self.apply_reflector(c, j, self.taus[j]);
        }
    }

    /// Applies `Q` to `c` in place.
    pub fn apply_q(&self, c: &mut CMat) {
        assert_eq!(c.nrows, self.packed.nrows);
        for j in (0..self.nrefl()).rev() {
            self.apply_reflector(c, j, self.taus[j].conj());
        }
    }

    fn apply_reflector(&self, c: &mut CMat, j: usize, tau: C64) {
        if tau == ZERO {
            return;
        }
        let m = self.packed.nrows;
        let v = &self.packed.col(j)[j..m];
        for col in 0..c.ncols {
            let ccol = &mut c.col_mut(col)[j..m];
            // w = v^H c with implicit v[0] = 1
            let mut w = ccol[0];
            for i in 1..v.len() {
                w += v[i].conj() * ccol[i];
            }
            let t = tau * w;
            ccol[0] -= t;
            for i in 1..v.len() {
                ccol[i] -= t * v[i];
            }
        }
    }

    /// First `k` columns of Q as a dense `m x k` matrix.
    pub fn q_thin(&self, k: usize) -> CMat {
        self.q_cols(0, k)
    }

    /// Columns `c0..c1` of the full Q as a dense matrix.
    pub fn q_cols(&self, c0: usize, c1: usize) -> CMat {
        let m = self.packed.nrows;
        assert!(c0 <= c1 && c1 <= m);
        let mut e = CMat::zeros(m, c1 - c0);
        for (j, col) in (c0..c1).enumerate() {
            e.set(col, j, ONE);
        }
        self.apply_q(&mut e);
        e
    }
}

/// `zlarfg`-style elementary reflector: returns `(beta, tau)` and rewrites
/// `x[1..]` with the reflector tail so that `(I - tau v v^H) x = beta e1`
/// with real `beta` and `v = [1, x[1..]]`.
fn make_reflector(x: &mut [C64]) -> (f64, C64) {
    let alpha = x[0];
    let tail_sq: f64 = x[1..].iter().map(|v| v.norm_sqr()).sum();
    if tail_sq == 0.0 && alpha.im == 0.0 {
        return (alpha.re, ZERO);
    }
    let norm = (alpha.norm_sqr() + tail_sq).sqrt();
    let beta = if alpha.re >= 0.0 { -norm } else { norm };
    let tau = C64::new((beta - alpha.re) / beta, alpha.im / beta);
    let scale = ONE / (alpha - C64::new(beta, 0.0));
    for v in &mut x[1..] {
        *v *= scale;
    }
    (beta, tau)
}

/// Householder QR without pivoting.
pub fn householder_qr(mut a: CMat) -> QrFactors {
    let m = a.nrows;
    let n = a.ncols;
    let k = m.min(n);
    let mut taus = Vec::with_capacity(k);
    for j in 0..k {
        let (beta, tau) = {
            let col = &mut a.col_mut(j)[j..m];
            make_reflector(col)
        };
        taus.push(tau);
        apply_packed_reflector(&mut a, j, tau);
        a.set(j, j, C64::new(beta, 0.0));
    }
    QrFactors { packed: a, taus }
}

/// Applies the reflector stored in column `j` (rows `j..m`, unit leading
/// entry implicit) to the trailing columns `j+1..n`.
fn apply_packed_reflector(a: &mut CMat, j: usize, tau: C64) {
    if tau == ZERO {
        return;
    }
    let m = a.nrows;
    let n = a.ncols;
    // Split the storage to borrow the reflector and the trailing block.
    let (head, tail) = a.data.split_at_mut((j + 1) * m);
    let v = &head[j * m + j..(j + 1) * m];
    for col in j + 1..n {
        let ccol = &mut tail[(col - j - 1) * m + j..(col - j) * m];
        let mut w = ccol[0];
        for i in 1..v.len() {
            w += v[i].conj() * ccol[i];
        }
        let t = tau * w;
        ccol[0] -= t;
        for i in 1..v.len() {
            ccol[i] -= t * v[i];
        }
    }
}

/// Column-pivoted Householder QR.
pub struct PivQrFactors {
    pub qr: QrFactors,
    /// `perm[j]` is the original index of the column factored at position `j`.
    pub perm: Vec<usize>,
}

impl PivQrFactors {
    /// Numerical rank by the relative pivot cutoff: the count of diagonal
    /// entries with `|r_jj| > cutoff * |r_00|`.
    pub fn rank(&self, rel_cutoff: f64) -> usize {
        let d = self.qr.r_diag_abs();
        if d.is_empty() || d[0] == 0.0 {
            return 0;
        }
        let thresh = rel_cutoff * d[0];
        d.iter().take_while(|&&v| v > thresh).count()
    }
}

/// Householder QR with classical column pivoting (largest remaining column
/// norm first, with downdate-and-recompute norm tracking).
pub fn col_piv_qr(mut a: CMat) -> PivQrFactors {
    let m = a.nrows;
    let n = a.ncols;
    let k = m.min(n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut norms: Vec<f64> = (0..n).map(|j| vec_norm(a.col(j))).collect();
    let orig = norms.clone();
    let mut taus = Vec::with_capacity(k);
    for j in 0..k {
        let (pivot, _) = norms[j..]
            .iter()
            .enumerate()
            .fold((0usize, -1.0f64), |acc, (i, &v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            });
        let pivot = pivot + j;
        if pivot != j {
            perm.swap(j, pivot);
            norms.swap(j, pivot);
            let (lo, hi) = (j.min(pivot), j.max(pivot));
            let (left, right) = a.data.split_at_mut(hi * m);
            left[lo * m..(lo + 1) * m].swap_with_slice(&mut right[..m]);
        }
        let (beta, tau) = {
            let col = &mut a.col_mut(j)[j..m];
            make_reflector(col)
        };
        taus.push(tau);
        apply_packed_reflector(&mut a, j, tau);
        a.set(j, j, C64::new(beta, 0.0));
        // Downdate remaining column norms; recompute when cancellation bites.
        for l in j + 1..n {
            if norms[l] > 0.0 {
                let r = a.get(j, l).norm();
                let down = (norms[l] * norms[l] - r * r).max(0.0);
                let fresh = down.sqrt();
                if fresh <= 1e-7 * orig[perm[l]] {
                    norms[l] = vec_norm(&a.col(l)[j + 1..m]);
                } else {
                    norms[l] = fresh;
                }
            }
        }
    }
    PivQrFactors {
        qr: QrFactors { packed: a, taus },
        perm,
    }
}

/// Back substitution: solves `R X = B` in place of `B` for upper-triangular
/// `R` (its leading `q x q` block, `q = B.nrows`). Fails when a diagonal
/// entry drops below `rel_cutoff` times the largest diagonal entry.
pub fn upper_tri_solve(r: &CMat, b: &mut CMat, rel_cutoff: f64) -> Result<(), DenseError> {
    let q = b.nrows;
    assert!(r.nrows >= q && r.ncols >= q);
    let max_diag = (0..q).map(|i| r.get(i, i).norm()).fold(0.0, f64::max);
    let thresh = rel_cutoff * max_diag;
    for i in 0..q {
        let d = r.get(i, i).norm();
        if d <= thresh || d == 0.0 {
            return Err(DenseError::RankDeficient {
                index: i,
                value: d,
                threshold: thresh,
            });
        }
    }
    for col in 0..b.ncols {
        let bcol = b.col_mut(col);
        for i in (0..q).rev() {
            let mut s = bcol[i];
            for k in i + 1..q {
                s -= r.get(i, k) * bcol[k];
            }
            bcol[i] = s / r.get(i, i);
        }
    }
    Ok(())
}

/// Forward substitution for the adjoint system: solves `R^H X = B` in place.
pub fn upper_tri_solve_adjoint(r: &CMat, b: &mut CMat, rel_cutoff: f64) -> Result<(), DenseError> {
    let q = b.nrows;
    assert!(r.nrows >= q && r.ncols >= q);
    let max_diag = (0..q).map(|i| r.get(i, i).norm()).fold(0.0, f64::max);
    let thresh = rel_cutoff * max_diag;
    for i in 0..q {
        let d = r.get(i, i).norm();
        if d <= thresh || d == 0.0 {
            return Err(DenseError::RankDeficient {
                index: i,
                value: d,
                threshold: thresh,
            });
        }
    }
    for col in 0..b.ncols {
        let bcol = b.col_mut(col);
        for i in 0..q {
            let mut s = bcol[i];
            for k in 0..i {
                s -= r.get(k, i).conj() * bcol[k];
            }
            bcol[i] = s / r.get(i, i).conj();
        }
    }
    Ok(())
}

/// Least-squares solve `argmin_X |A X - B|_F` for full-column-rank tall `A`
/// via Householder QR. Used as the dense reference path.
pub fn ls_solve(a: &CMat, b: &CMat) -> Result<CMat, DenseError> {
    assert!(a.nrows >= a.ncols);
    assert_eq!(a.nrows, b.nrows);
    let n = a.ncols;
    let qr = householder_qr(a.clone());
    let mut y = b.clone();
    qr.apply_qh(&mut y);
    let mut x = y.block(0, n, 0, y.ncols());
    let r = qr.r_block(n, n);
    upper_tri_solve(&r, &mut x, 1e-300)?;
    Ok(x)
}

/// Right-pseudoinverse solve `W = X pinv(Omega)`, i.e. the least-squares
/// fit `argmin_W |X - W Omega|_F` for wide full-row-rank `Omega` (q x s,
/// s >= q). Computed through the pivoted QR of `Omega^H` with the given
/// relative pivot cutoff; directions below the cutoff are dropped.
pub fn right_pinv_solve(x: &CMat, omega: &CMat, rel_cutoff: f64) -> CMat {
    let q = omega.nrows;
    let s = omega.ncols;
    assert_eq!(x.ncols(), s);
    let p = x.nrows();
    if q == 0 {
        return CMat::zeros(p, 0);
    }
    let piv = col_piv_qr(omega.adjoint());
    let rank = piv.rank(rel_cutoff);
    let mut w = CMat::zeros(p, q);
    if rank == 0 {
        return w;
    }
    // Omega^H P = Q R  =>  Omega = P R^H Q^H, pinv(Omega) = Q_r R_r^{-H} P^T.
    let qthin = piv.qr.q_thin(rank); // s x rank
    let t = x.mul(&qthin); // p x rank
    let r = piv.qr.r_block(rank, rank);
    // Solve W_r R_r^H = T, i.e. R_r W_r^H = T^H by back substitution.
    let mut th = t.adjoint();
    upper_tri_solve(&r, &mut th, 1e-300).expect("pivot cutoff already enforced rank");
    let wr = th.adjoint(); // p x rank
    for (jr, &orig) in piv.perm.iter().take(rank).enumerate() {
        w.col_mut(orig).copy_from_slice(wr.col(jr));
    }
    w
}

/// One-sided Jacobi SVD. Returns the left singular vectors and singular
/// values (descending) of `a`; accurate for small singular values, intended
/// for small blocks. The sweep order is fixed, so results are deterministic.
pub fn jacobi_svd(a: &CMat) -> (CMat, Vec<f64>) {
    let mut u = a.clone();
    let n = u.ncols();
    let eps = 1e-30;
    let tol = 1e-14;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let (ci, cj) = split_two_cols(&mut u, i, j);
                let aii: f64 = ci.iter().map(|v| v.norm_sqr()).sum();
                let ajj: f64 = cj.iter().map(|v| v.norm_sqr()).sum();
                let aij = dot(ci, cj);
                let mag = aij.norm();
                if mag <= tol * (aii * ajj).sqrt() + eps {
                    continue;
                }
                off = off.max(mag / ((aii * ajj).sqrt() + eps));
                // Complex Jacobi rotation diagonalizing the 2x2 Gram block.
                let phase = aij / mag;
                let theta = 0.5 * (2.0 * mag).atan2(aii - ajj);
                let (c, s) = (theta.cos(), theta.sin());
                for (vi, vj) in ci.iter_mut().zip(cj.iter_mut()) {
                    let x = *vi;
                    let y = *vj;
                    *vi = c * x + s * phase.conj() * y;
                    *vj = -s * phase * x + c * y;
                }
            }
        }
        if off <= tol {
            break;
        }
    }
    let mut sv: Vec<(f64, usize)> = (0..n).map(|j| (vec_norm(u.col(j)), j)).collect();
    sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out = CMat::zeros(u.nrows(), n);
    let mut vals = Vec::with_capacity(n);
    for (k, &(s, j)) in sv.iter().enumerate() {
        vals.push(s);
        if s > 0.0 {
            let src = u.col(j).to_vec();
            let dst = out.col_mut(k);
            for (d, v) in dst.iter_mut().zip(src.iter()) {
                *d = v / s;
            }
        }
    }
    (out, vals)
}

fn split_two_cols(m: &mut CMat, i: usize, j: usize) -> (&mut [C64], &mut [C64]) {
    debug_assert!(i < j);
    let rows = m.nrows;
    let (left, right) = m.data.split_at_mut(j * rows);
    (
        &mut left[i * rows..(i + 1) * rows],
        &mut right[..rows],
    )
}

/// Singular values of `a` (descending). A pivoted-QR pre-reduction discards
/// a trailing block whose Frobenius mass is below `1e-13 * |a|_F`, so values
/// reported above that scale are reliable; the tail is padded with zeros.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 {
        return vec![0.0; n.min(m)];
    }
    if m < n {
        return singular_values(&a.adjoint());
    }
    let total = a.fro_norm();
    if total == 0.0 {
        return vec![0.0; n];
    }
    let piv = col_piv_qr(a.clone());
    // Find the smallest leading block of R that carries all but a negligible
    // Frobenius tail; singular values of A equal those of R.
    let mut row_mass: Vec<f64> = vec![0.0; n];
    for j in 0..n {
        let top = (j + 1).min(n);
        for i in 0..top {
            row_mass[i] += piv.qr.packed.get(i, j).norm_sqr();
        }
    }
    let mut tail = 0.0;
    let mut q = n;
    while q > 1 {
        let with_row = tail + row_mass[q - 1];
        if with_row.sqrt() > 1e-13 * total {
            break;
        }
        tail = with_row;
        q -= 1;
    }
    let r = piv.qr.r_block(q, n);
    let (_, mut sv) = jacobi_svd(&r.adjoint());
    sv.resize(n, 0.0);
    sv
}
