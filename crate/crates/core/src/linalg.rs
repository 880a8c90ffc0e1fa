//! Dense kernels shared by every regressor: column-pivoted Householder QR,
//! (weighted) least-squares residuals and order statistics.
//!
//! Matrices are stored column-major. The fitters only ever append columns
//! (`[X, Z, Z_pi]`) and factor column by column, so this is the layout that
//! keeps the inner loops contiguous.

use thiserror::Error;

/// Relative tolerance used to declare a pivoted column numerically dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("weights must be non-negative and not all zero")]
    InvalidWeights,
    #[error("empty input")]
    Empty,
    #[error("quantile level {0} outside [0, 1]")]
    InvalidQuantile(f64),
    #[error("matrix is singular")]
    Singular,
}

/// Dense real matrix, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Column of ones, the conventional intercept.
    pub fn ones(rows: usize) -> Self {
        Self {
            rows,
            cols: 1,
            data: vec![1.0; rows],
        }
    }

    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "column-major buffer has wrong length"
        );
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[j * rows + i] = data[i * cols + j];
            }
        }
        m
    }

    /// Builds a matrix from equally long columns.
    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, columns: &[C]) -> Self {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            let c = c.as_ref();
            assert_eq!(c.len(), rows, "column length mismatch");
            data.extend_from_slice(c);
        }
        Self {
            rows,
            cols: columns.len(),
            data,
        }
    }

    pub fn column_vector(v: &[f64]) -> Self {
        Self::from_column_major(v.len(), 1, v.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_column_major(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Horizontal concatenation `[a, b, ...]`.
    pub fn hstack(blocks: &[&Matrix]) -> Matrix {
        let rows = blocks.first().map_or(0, |b| b.rows);
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for b in blocks {
            assert_eq!(b.rows, rows, "hstack row mismatch");
            data.extend_from_slice(&b.data);
        }
        Matrix { rows, cols, data }
    }

    /// Row-permuted copy: row `i` of the result is row `mapping[i]` of `self`.
    pub fn permute_rows(&self, mapping: &[usize]) -> Matrix {
        assert_eq!(mapping.len(), self.rows);
        let mut out = Matrix::zeros(self.rows, self.cols);
        for j in 0..self.cols {
            let src = self.column(j);
            let dst = out.column_mut(j);
            for (d, &m) in dst.iter_mut().zip(mapping) {
                *d = src[m];
            }
        }
        out
    }

    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.column(j));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.column(j)) {
                *o += a * vj;
            }
        }
        out
    }

    /// Rows scaled by `s[i]`.
    pub fn scale_rows(&self, s: &[f64]) -> Matrix {
        assert_eq!(s.len(), self.rows);
        let mut out = self.clone();
        for j in 0..self.cols {
            for (a, &si) in out.column_mut(j).iter_mut().zip(s) {
                *a *= si;
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Householder QR, optionally with column pivoting.
///
/// Reflector `k` is stored below the diagonal of column `k` with an implicit
/// unit leading entry; `R` occupies the upper triangle. `perm[k]` is the
/// original index of the column factored at step `k`.
#[derive(Debug, Clone)]
pub struct QrFactor {
    qr: Matrix,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl QrFactor {
    /// Column-pivoted factorization. The column with the largest remaining
    /// norm is factored next (ties go to the lowest original index);
    /// factoring stops once that norm falls below
    /// `RANK_TOLERANCE * (largest original column norm)`.
    pub fn pivoted(a: &Matrix) -> Self {
        Self::factor(a.clone(), true)
    }

    /// Plain Householder QR of a matrix assumed to have full column rank.
    /// Columns whose remaining norm collapses still stop the factorization,
    /// so `rank()` reports a rank deficiency instead of dividing by zero.
    pub fn unpivoted(a: Matrix) -> Self {
        Self::factor(a, false)
    }

    fn factor(mut qr: Matrix, pivot: bool) -> Self {
        let (n, k) = (qr.rows, qr.cols);
        let steps = n.min(k);
        let mut perm: Vec<usize> = (0..k).collect();
        let mut tau = Vec::with_capacity(steps);
        let max_norm = (0..k).map(|j| norm2(qr.column(j))).fold(0.0, f64::max);
        let tol = RANK_TOLERANCE * max_norm;
        let mut rank = 0;
        for step in 0..steps {
            if pivot {
                let mut best = step;
                let mut best_norm = -1.0;
                for j in step..k {
                    let nj = norm2(&qr.column(j)[step..]);
                    if nj > best_norm || (nj == best_norm && perm[j] < perm[best]) {
                        best = j;
                        best_norm = nj;
                    }
                }
                if best != step {
                    swap_columns(&mut qr, step, best);
                    perm.swap(step, best);
                }
            }
            let (t, beta) = make_reflector(&mut qr.column_mut(step)[step..]);
            if !(beta.abs() > tol) || max_norm == 0.0 {
                break;
            }
            tau.push(t);
            rank += 1;
            // apply H to trailing columns
            let (head, tail) = qr.data.split_at_mut((step + 1) * n);
            let v = &head[step * n + step..step * n + n];
            for j in 0..(k - step - 1) {
                let col = &mut tail[j * n + step..j * n + n];
                apply_reflector(v, t, col);
            }
        }
        Self {
            qr,
            tau,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Original indices of the columns spanning the column space, ascending.
    pub fn independent_columns(&self) -> Vec<usize> {
        let mut idx = self.perm[..self.rank].to_vec();
        idx.sort_unstable();
        idx
    }

    #[inline]
    fn reflector(&self, k: usize) -> &[f64] {
        &self.qr.column(k)[k..]
    }

    /// Overwrites `y` with `Q^T y` using the first `rank` reflectors.
    pub fn apply_qt(&self, y: &mut [f64]) {
        for k in 0..self.rank {
            let v = self.reflector(k);
            apply_reflector_with_diag(v, self.tau[k], &mut y[k..]);
        }
    }

    /// Overwrites `y` with `Q y`.
    pub fn apply_q(&self, y: &mut [f64]) {
        for k in (0..self.rank).rev() {
            let v = self.reflector(k);
            apply_reflector_with_diag(v, self.tau[k], &mut y[k..]);
        }
    }

    /// `y - H y` where `H` projects onto the factored column space.
    pub fn residuals(&self, y: &[f64]) -> Vec<f64> {
        let mut r = y.to_vec();
        self.apply_qt(&mut r);
        r[..self.rank].iter_mut().for_each(|v| *v = 0.0);
        self.apply_q(&mut r);
        r
    }

    /// Least-squares coefficients for the kept columns, in factoring order
    /// (`perm()[..rank]`).
    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let mut b = qty[..self.rank].to_vec();
        for i in (0..self.rank).rev() {
            let mut s = b[i];
            for j in (i + 1)..self.rank {
                s -= self.qr.get(i, j) * b[j];
            }
            b[i] = s / self.qr.get(i, i);
        }
        b
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }
}

fn swap_columns(m: &mut Matrix, a: usize, b: usize) {
    let n = m.rows;
    let (lo, hi) = (a.min(b), a.max(b));
    let (first, second) = m.data.split_at_mut(hi * n);
    first[lo * n..lo * n + n].swap_with_slice(&mut second[..n]);
}

/// Turns `x` into a Householder vector in place (unit leading entry implied,
/// `x[0]` receives beta). Returns `(tau, beta)`.
fn make_reflector(x: &mut [f64]) -> (f64, f64) {
    let alpha = x[0];
    let tail_norm = norm2(&x[1..]);
    if tail_norm == 0.0 {
        return (0.0, alpha);
    }
    let norm = alpha.hypot(tail_norm);
    let beta = if alpha >= 0.0 { -norm } else { norm };
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    x[1..].iter_mut().for_each(|v| *v *= scale);
    x[0] = beta;
    (tau, beta)
}

/// Applies `I - tau v v^T` to `y`, where `v[0]` holds R's diagonal and the
/// reflector's leading 1 is implicit.
#[inline]
fn apply_reflector_with_diag(v: &[f64], tau: f64, y: &mut [f64]) {
    if tau == 0.0 {
        return;
    }
    let mut s = y[0];
    for (a, b) in v[1..].iter().zip(&y[1..]) {
        s += a * b;
    }
    s *= tau;
    y[0] -= s;
    for (yi, vi) in y[1..].iter_mut().zip(&v[1..]) {
        *yi -= s * vi;
    }
}

#[inline]
fn apply_reflector(v: &[f64], tau: f64, y: &mut [f64]) {
    apply_reflector_with_diag(v, tau, y)
}

fn check_inputs(y: &[f64], c: &Matrix) -> Result<(), LinalgError> {
    if y.len() != c.rows() {
        return Err(LinalgError::DimensionMismatch {
            expected: c.rows(),
            found: y.len(),
        });
    }
    if y.is_empty() {
        return Err(LinalgError::Empty);
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite("response"));
    }
    if !c.is_finite() {
        return Err(LinalgError::NonFinite("design"));
    }
    Ok(())
}

/// Residuals `y - H(C) y` of the orthogonal projection onto `span(C)`.
/// Rank-deficient designs are handled by the pivoted factorization; the
/// result does not depend on which spanning columns were kept.
pub fn least_squares_residuals(y: &[f64], c: &Matrix) -> Result<Vec<f64>, LinalgError> {
    check_inputs(y, c)?;
    Ok(QrFactor::pivoted(c).residuals(y))
}

/// Residuals `y - C b` where `b` minimises `sum_i w_i (y_i - C_i b)^2`.
///
/// `sqrt(w) * result` equals the ordinary least-squares residuals of the
/// row-rescaled problem.
pub fn weighted_least_squares_residuals(
    y: &[f64],
    c: &Matrix,
    w: &[f64],
) -> Result<Vec<f64>, LinalgError> {
    check_inputs(y, c)?;
    if w.len() != y.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: y.len(),
            found: w.len(),
        });
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || w.iter().all(|&v| v == 0.0) {
        return Err(LinalgError::InvalidWeights);
    }
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let cw = c.scale_rows(&sw);
    let yw: Vec<f64> = y.iter().zip(&sw).map(|(a, b)| a * b).collect();
    let qr = QrFactor::pivoted(&cw);
    let b = qr.coefficients(&yw);
    let mut r = y.to_vec();
    for (k, &bk) in b.iter().enumerate() {
        let col = c.column(qr.perm()[k]);
        for (ri, &ci) in r.iter_mut().zip(col) {
            *ri -= ci * bk;
        }
    }
    Ok(r)
}

/// Indices of a maximal independent subset of the columns of `c`, ascending.
pub fn column_basis(c: &Matrix) -> Vec<usize> {
    QrFactor::pivoted(c).independent_columns()
}

/// Numerical rank under [`RANK_TOLERANCE`].
pub fn rank(c: &Matrix) -> usize {
    QrFactor::pivoted(c).rank()
}

/// Reusable weighted least-squares solver for a fixed full-rank design.
///
/// Used by the IRLS loops: the design is reduced to independent columns
/// once, then every iteration factors `sqrt(W) C` without pivoting.
#[derive(Debug, Clone)]
pub struct WeightedSolver {
    design: Matrix,
    scratch: Matrix,
    sw: Vec<f64>,
    rhs: Vec<f64>,
}

impl WeightedSolver {
    /// `c` must already have full column rank (see [`column_basis`]).
    pub fn new(c: Matrix) -> Self {
        let scratch = c.clone();
        let n = c.rows();
        Self {
            design: c,
            scratch,
            sw: vec![0.0; n],
            rhs: vec![0.0; n],
        }
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    /// Writes `y - C b_w` into `out`. Weights must be positive.
    pub fn residuals_into(
        &mut self,
        y: &[f64],
        w: &[f64],
        out: &mut [f64],
    ) -> Result<(), LinalgError> {
        let n = self.design.rows();
        for i in 0..n {
            self.sw[i] = w[i].sqrt();
            self.rhs[i] = y[i] * self.sw[i];
        }
        for j in 0..self.design.cols() {
            let src = self.design.column(j);
            let dst = &mut self.scratch.data[j * n..(j + 1) * n];
            for i in 0..n {
                dst[i] = src[i] * self.sw[i];
            }
        }
        let qr = QrFactor::factor(
            std::mem::replace(&mut self.scratch, Matrix::zeros(0, 0)),
            false,
        );
        if qr.rank() < self.design.cols() {
            self.scratch = qr.qr;
            return Err(LinalgError::Singular);
        }
        let b = qr.coefficients(&self.rhs);
        out.copy_from_slice(y);
        for (j, &bj) in b.iter().enumerate() {
            let col = self.design.column(qr.perm[j]);
            for (o, &cj) in out.iter_mut().zip(col) {
                *o -= cj * bj;
            }
        }
        self.scratch = qr.qr;
        Ok(())
    }
}

fn sorted_copy(v: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if v.is_empty() {
        return Err(LinalgError::Empty);
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(LinalgError::NonFinite("order statistic input"));
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Sample median; the mean of the two central order statistics for even
/// lengths.
pub fn median(v: &[f64]) -> Result<f64, LinalgError> {
    if v.is_empty() {
        return Err(LinalgError::Empty);
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(LinalgError::NonFinite("order statistic input"));
    }
    let mut s = v.to_vec();
    let n = s.len();
    let mid = n / 2;
    let (_, upper, _) = s.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        return Ok(upper);
    }
    let lower = s[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(0.5 * (lower + upper))
}

/// Type-1 (left-continuous inverse empirical CDF) quantile: the smallest
/// order statistic `x_(k)` with `k / n >= q`; `q = 0` gives the minimum.
pub fn quantile(v: &[f64], q: f64) -> Result<f64, LinalgError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(LinalgError::InvalidQuantile(q));
    }
    let s = sorted_copy(v)?;
    Ok(s[type1_index(s.len(), q)])
}

pub(crate) fn type1_index(n: usize, q: f64) -> usize {
    let k = (q * n as f64).ceil() as usize;
    k.saturating_sub(1).min(n - 1)
}
