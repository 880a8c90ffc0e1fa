//! Linear quantile regression by an exact exchange (simplex-type) method
//! over basic solutions.
//!
//! A basic solution interpolates `k` observations `h` (with `C_h`
//! nonsingular): `b = C_h^{-1} y_h`. From a vertex, the `2k` edges move one
//! basic residual off zero in either direction while keeping the others at
//! zero. The pinball loss is piecewise linear along an edge, so the exact
//! minimiser along the steepest descending edge is found by sorting the
//! breakpoints where nonbasic residuals cross zero. Every step strictly
//! lowers the loss, so the method terminates at an optimal vertex. At
//! degenerate vertices (extra zero residuals) the alternative bases of the
//! same vertex are searched in lowest-index order before declaring
//! optimality.
//!
//! The response is first replaced by its OLS residuals on the design; every
//! decision depends only on those residuals and the design, so the output is
//! unchanged when the response is shifted by anything in the column space.

use std::cmp::Ordering;
use std::collections::{HashSet, VecDeque};

use super::{FitError, QuantileConfig};
use crate::linalg::{type1_index, LinalgError, Matrix, QrFactor};

/// Upper bound on bases visited while searching a degenerate vertex.
const DEGENERATE_SEARCH_LIMIT: usize = 4096;

/// Observation-aligned quantile-regression output.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub q: f64,
    /// `y - C b`, in observation order.
    pub residuals: Vec<f64>,
    /// Observations interpolated by the optimal vertex, ascending.
    pub basis: Vec<usize>,
    pub iterations: usize,
    /// The degenerate-vertex search hit its limit; optimality not certified.
    pub uncertified: bool,
}

impl QuantileFit {
    pub fn loss(&self) -> f64 {
        pinball_loss(&self.residuals, self.q)
    }
}

/// `sum_i (q - 1{r_i < 0}) r_i`.
pub fn pinball_loss(residuals: &[f64], q: f64) -> f64 {
    residuals
        .iter()
        .map(|&r| if r < 0.0 { (q - 1.0) * r } else { q * r })
        .sum()
}

/// Quantile regression of `y` on `c` at level `cfg.q`.
pub fn quantile_fit(y: &[f64], c: &Matrix, cfg: &QuantileConfig) -> Result<QuantileFit, FitError> {
    let mut fits = quantile_fit_many(y, c, std::slice::from_ref(cfg))?;
    Ok(fits.remove(0))
}

/// Several quantile levels on one design, sharing the factorization.
pub fn quantile_fit_many(
    y: &[f64],
    c: &Matrix,
    cfgs: &[QuantileConfig],
) -> Result<Vec<QuantileFit>, FitError> {
    for cfg in cfgs {
        cfg.validate()?;
    }
    let n = y.len();
    if c.rows() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: c.rows(),
            found: n,
        }
        .into());
    }
    if n == 0 {
        return Err(LinalgError::Empty.into());
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite("response").into());
    }
    if !c.is_finite() {
        return Err(LinalgError::NonFinite("design").into());
    }
    let qr = QrFactor::pivoted(c);
    let r0 = qr.residuals(y);
    let a = c.select_columns(&qr.independent_columns());
    let scale = r0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    cfgs.iter()
        .map(|cfg| {
            if a.cols() == 0 {
                return Ok(QuantileFit {
                    q: cfg.q,
                    residuals: r0.clone(),
                    basis: Vec::new(),
                    iterations: 0,
                    uncertified: false,
                });
            }
            if scale == 0.0 {
                // response lies in the column space: every basis is optimal
                return Ok(QuantileFit {
                    q: cfg.q,
                    residuals: vec![0.0; n],
                    basis: Vec::new(),
                    iterations: 0,
                    uncertified: false,
                });
            }
            Exchange {
                a: &a,
                r0: &r0,
                q: cfg.q,
                ztol: cfg.tol,
                gtol: 1e-10 * n as f64,
                max_iter: cfg.max_iter,
            }
            .solve()
        })
        .collect()
}

/// Dense LU with partial pivoting of a small `k x k` basis matrix.
struct Lu {
    k: usize,
    m: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    fn factor(a: &Matrix, rows: &[usize]) -> Option<Self> {
        let k = rows.len();
        let mut m = vec![0.0; k * k];
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..k {
                m[r * k + j] = a.get(i, j);
            }
        }
        let scale = m.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
        let mut piv: Vec<usize> = (0..k).collect();
        for col in 0..k {
            let mut p = col;
            let mut best = m[col * k + col].abs();
            for r in (col + 1)..k {
                let v = m[r * k + col].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > 1e-14 * scale) {
                return None;
            }
            if p != col {
                for j in 0..k {
                    m.swap(col * k + j, p * k + j);
                }
                piv.swap(col, p);
            }
            let d = m[col * k + col];
            for r in (col + 1)..k {
                let f = m[r * k + col] / d;
                m[r * k + col] = f;
                if f != 0.0 {
                    for j in (col + 1)..k {
                        m[r * k + j] -= f * m[col * k + j];
                    }
                }
            }
        }
        Some(Self { k, m, piv })
    }

    /// Solves `B x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..k {
            let mut s = x[i];
            for j in 0..i {
                s -= self.m[i * k + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..k).rev() {
            let mut s = x[i];
            for j in (i + 1)..k {
                s -= self.m[i * k + j] * x[j];
            }
            x[i] = s / self.m[i * k + i];
        }
        x
    }

    /// Solves `B^T x = c`.
    fn solve_t(&self, c: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut z = c.to_vec();
        for i in 0..k {
            let mut s = z[i];
            for j in 0..i {
                s -= self.m[j * k + i] * z[j];
            }
            z[i] = s / self.m[i * k + i];
        }
        for i in (0..k).rev() {
            let mut s = z[i];
            for j in (i + 1)..k {
                s -= self.m[j * k + i] * z[j];
            }
            z[i] = s;
        }
        let mut x = vec![0.0; k];
        for (r, &p) in self.piv.iter().enumerate() {
            x[p] = z[r];
        }
        x
    }
}

struct Exchange<'a> {
    a: &'a Matrix,
    r0: &'a [f64],
    q: f64,
    /// Relative zero tolerance, applied per observation.
    ztol: f64,
    gtol: f64,
    max_iter: usize,
}

/// Everything known about one basis of a vertex.
struct Vertex {
    lu: Lu,
    residuals: Vec<f64>,
    /// Nonbasic observations with (numerically) zero residual.
    zeros: Vec<usize>,
    is_zero: Vec<bool>,
    /// `A_z B^{-1}` for each `z` in `zeros`.
    zero_rows: Vec<Vec<f64>>,
    /// Steepest edge: (derivative, basis slot, direction sign).
    best: (f64, usize, f64),
}

impl Exchange<'_> {
    fn solve(&self) -> Result<QuantileFit, FitError> {
        let n = self.r0.len();
        let k = self.a.cols();
        let mut basis = self.initial_basis()?;
        let mut iterations = 0;
        let mut uncertified = false;
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        loop {
            let mut vertex = self.evaluate(&basis)?;
            if vertex.best.0 >= -self.gtol && !vertex.zeros.is_empty() {
                match self.search_degenerate(&basis, &vertex)? {
                    DegenerateOutcome::Improving(b, v) => {
                        basis = b;
                        vertex = v;
                    }
                    DegenerateOutcome::Optimal => {}
                    DegenerateOutcome::LimitReached => uncertified = true,
                }
            }
            // a repeated basis means rounding broke strict descent; stop there
            let revisited = !seen.insert(sorted(&basis));
            uncertified |= revisited;
            if vertex.best.0 >= -self.gtol || revisited {
                let mut sorted_basis = basis.clone();
                sorted_basis.sort_unstable();
                return Ok(QuantileFit {
                    q: self.q,
                    residuals: vertex.residuals,
                    basis: sorted_basis,
                    iterations,
                    uncertified,
                });
            }
            iterations += 1;
            if iterations > self.max_iter {
                return Err(FitError::QuantileNotConverged(self.max_iter));
            }
            let (slope, slot, sign) = vertex.best;
            let entering = self.line_search(&basis, &vertex, slope, slot, sign)?;
            basis[slot] = entering;
            debug_assert_eq!(basis.len(), k);
            debug_assert!(basis.iter().all(|&i| i < n));
        }
    }

    /// Greedy choice of `k` independent rows, preferring observations whose
    /// OLS residual is closest to the type-1 `q`-quantile of the OLS
    /// residuals (ties by index).
    fn initial_basis(&self) -> Result<Vec<usize>, FitError> {
        let n = self.r0.len();
        let k = self.a.cols();
        let mut sorted = self.r0.to_vec();
        sorted.sort_by(f64::total_cmp);
        let target = sorted[type1_index(n, self.q)];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            let di = (self.r0[i] - target).abs();
            let dj = (self.r0[j] - target).abs();
            di.total_cmp(&dj).then(i.cmp(&j))
        });
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut basis = Vec::with_capacity(k);
        for &i in &order {
            let row = self.a.row(i);
            let row_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if row_norm == 0.0 {
                continue;
            }
            let mut v = row;
            for _ in 0..2 {
                for u in &ortho {
                    let p: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= p * ui);
                }
            }
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nv > 1e-8 * row_norm {
                v.iter_mut().for_each(|x| *x /= nv);
                ortho.push(v);
                basis.push(i);
                if basis.len() == k {
                    return Ok(basis);
                }
            }
        }
        Err(FitError::RankFailure)
    }

    fn evaluate(&self, basis: &[usize]) -> Result<Vertex, FitError> {
        let n = self.r0.len();
        let k = self.a.cols();
        let lu = Lu::factor(self.a, basis).ok_or(FitError::RankFailure)?;
        let rhs: Vec<f64> = basis.iter().map(|&i| self.r0[i]).collect();
        let coef = lu.solve(&rhs);
        let mut residuals = self.r0.to_vec();
        let mut magnitude: Vec<f64> = self.r0.iter().map(|r| r.abs()).collect();
        for (j, &bj) in coef.iter().enumerate() {
            for ((r, m), &aij) in residuals
                .iter_mut()
                .zip(&mut magnitude)
                .zip(self.a.column(j))
            {
                *r -= aij * bj;
                *m += (aij * bj).abs();
            }
        }
        let mut is_basic = vec![false; n];
        for &i in basis {
            residuals[i] = 0.0;
            is_basic[i] = true;
        }

        let q = self.q;
        let mut v = vec![0.0; k];
        let mut zeros = Vec::new();
        let mut is_zero = vec![false; n];
        for i in 0..n {
            if is_basic[i] {
                continue;
            }
            let r = residuals[i];
            if r.abs() <= self.ztol * magnitude[i] {
                zeros.push(i);
                is_zero[i] = true;
                continue;
            }
            let psi = if r > 0.0 { q } else { q - 1.0 };
            for (j, vj) in v.iter_mut().enumerate() {
                *vj += psi * self.a.get(i, j);
            }
        }
        let u = lu.solve_t(&v);
        let zero_rows: Vec<Vec<f64>> = zeros.iter().map(|&z| lu.solve_t(&self.a.row(z))).collect();

        let mut best = (f64::INFINITY, 0, 1.0);
        for j in 0..k {
            let gsum = -u[j];
            let (mut zp, mut zm) = (0.0, 0.0);
            for d in &zero_rows {
                zp += zero_cost(d[j], q);
                zm += zero_cost(-d[j], q);
            }
            let g_plus = gsum + zp + (1.0 - q);
            let g_minus = -gsum + zm + q;
            if g_plus < best.0 {
                best = (g_plus, j, 1.0);
            }
            if g_minus < best.0 {
                best = (g_minus, j, -1.0);
            }
        }
        Ok(Vertex {
            lu,
            residuals,
            zeros,
            is_zero,
            zero_rows,
            best,
        })
    }

    /// Exact minimisation along the chosen edge; returns the entering
    /// observation.
    fn line_search(
        &self,
        basis: &[usize],
        vertex: &Vertex,
        slope: f64,
        slot: usize,
        sign: f64,
    ) -> Result<usize, FitError> {
        let n = self.r0.len();
        let k = self.a.cols();
        let mut e = vec![0.0; k];
        e[slot] = sign;
        let d = vertex.lu.solve(&e);
        let mut step = vec![0.0; n];
        for (j, &dj) in d.iter().enumerate() {
            for (s, &aij) in step.iter_mut().zip(self.a.column(j)) {
                *s += aij * dj;
            }
        }
        let mut is_basic = vec![false; n];
        for &i in basis {
            is_basic[i] = true;
        }
        let mut breaks: Vec<(f64, usize, f64)> = Vec::new();
        for i in 0..n {
            if is_basic[i] {
                continue;
            }
            let r = vertex.residuals[i];
            let ai = step[i];
            if vertex.is_zero[i] || ai == 0.0 || (r > 0.0) != (ai > 0.0) {
                continue;
            }
            breaks.push((r / ai, i, ai.abs()));
        }
        breaks.sort_by(|x, y| {
            x.0.partial_cmp(&y.0)
                .unwrap_or(Ordering::Equal)
                .then(x.1.cmp(&y.1))
        });
        let mut s = slope;
        for (_, i, w) in breaks {
            s += w;
            if s >= 0.0 {
                return Ok(i);
            }
        }
        Err(FitError::RankFailure)
    }

    /// Breadth-first search over the other bases of a degenerate vertex,
    /// generated by swapping a zero-residual observation into the basis
    /// (lowest indices first).
    fn search_degenerate(
        &self,
        basis: &[usize],
        vertex: &Vertex,
    ) -> Result<DegenerateOutcome, FitError> {
        let key = |b: &[usize]| {
            let mut s = b.to_vec();
            s.sort_unstable();
            s
        };
        let mut visited: HashSet<Vec<usize>> = HashSet::new();
        visited.insert(key(basis));
        let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
        push_neighbours(basis, vertex, &mut visited, &mut queue, key);
        while let Some(candidate) = queue.pop_front() {
            if visited.len() > DEGENERATE_SEARCH_LIMIT {
                return Ok(DegenerateOutcome::LimitReached);
            }
            let Ok(v) = self.evaluate(&candidate) else {
                continue;
            };
            if v.best.0 < -self.gtol {
                return Ok(DegenerateOutcome::Improving(candidate, v));
            }
            push_neighbours(&candidate, &v, &mut visited, &mut queue, key);
        }
        Ok(DegenerateOutcome::Optimal)
    }
}

enum DegenerateOutcome {
    Improving(Vec<usize>, Vertex),
    Optimal,
    LimitReached,
}

fn push_neighbours(
    basis: &[usize],
    vertex: &Vertex,
    visited: &mut HashSet<Vec<usize>>,
    queue: &mut VecDeque<Vec<usize>>,
    key: impl Fn(&[usize]) -> Vec<usize>,
) {
    let mut order: Vec<usize> = (0..vertex.zeros.len()).collect();
    order.sort_by_key(|&z| vertex.zeros[z]);
    let mut slots: Vec<usize> = (0..basis.len()).collect();
    slots.sort_by_key(|&j| basis[j]);
    for zi in order {
        let z = vertex.zeros[zi];
        let row = &vertex.zero_rows[zi];
        for &j in &slots {
            if row[j].abs() <= 1e-9 {
                continue;
            }
            let mut next = basis.to_vec();
            next[j] = z;
            if visited.insert(key(&next)) {
                queue.push_back(next);
            }
        }
    }
}

fn sorted(b: &[usize]) -> Vec<usize> {
    let mut s = b.to_vec();
    s.sort_unstable();
    s
}

/// One-sided derivative of `rho_q(-t a)` at `t = 0+`.
#[inline]
fn zero_cost(a: f64, q: f64) -> f64 {
    if a < 0.0 {
        -a * q
    } else {
        a * (1.0 - q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(q: f64) -> QuantileConfig {
        QuantileConfig::new(q)
    }

    #[test]
    fn intercept_median_odd() {
        let y = [3.0, -1.0, 7.0, 2.0, 5.0];
        let fit = quantile_fit(&y, &Matrix::ones(5), &cfg(0.5)).unwrap();
        let expected: Vec<f64> = y.iter().map(|v| v - 3.0).collect();
        for (a, b) in fit.residuals.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn intercept_median_even_lies_between_central_values() {
        let y = [1.0, 4.0, 2.0, 3.0];
        let fit = quantile_fit(&y, &Matrix::ones(4), &cfg(0.5)).unwrap();
        let b = y[0] - fit.residuals[0];
        assert!((2.0 - 1e-12..=3.0 + 1e-12).contains(&b));
    }

    #[test]
    fn upper_quantile_attains_grid_minimum() {
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        let fit = quantile_fit(&y, &Matrix::ones(10), &cfg(0.9)).unwrap();
        // 1-D oracle: the optimum of a piecewise-linear loss is at a data point
        let best = y
            .iter()
            .map(|&b| pinball_loss(&y.iter().map(|v| v - b).collect::<Vec<_>>(), 0.9))
            .fold(f64::INFINITY, f64::min);
        assert!(
            (fit.loss() - best).abs() < 1e-12,
            "{} vs {}",
            fit.loss(),
            best
        );
    }

    /// Enumerates all 15 basic solutions of a 6 x 2 problem.
    #[test]
    fn matches_exhaustive_basic_solutions() {
        let x = [0.3, -1.2, 2.1, 0.8, -0.4, 1.5];
        let y = [1.0, -0.5, 3.2, 0.4, 0.9, 2.8];
        let c = Matrix::from_columns(6, &[vec![1.0; 6], x.to_vec()]);
        for &q in &[0.1, 0.25, 0.5, 0.75, 0.9] {
            let mut best = f64::INFINITY;
            for i in 0..6 {
                for j in (i + 1)..6 {
                    let slope = (y[j] - y[i]) / (x[j] - x[i]);
                    let icpt = y[i] - slope * x[i];
                    let r: Vec<f64> = (0..6).map(|t| y[t] - icpt - slope * x[t]).collect();
                    best = best.min(pinball_loss(&r, q));
                }
            }
            let fit = quantile_fit(&y, &c, &cfg(q)).unwrap();
            assert!(
                (fit.loss() - best).abs() < 1e-12,
                "q={q}: {} vs {best}",
                fit.loss()
            );
            let neg = fit.residuals.iter().filter(|&&r| r < -1e-12).count() as f64;
            let nonpos = fit.residuals.iter().filter(|&&r| r <= 1e-12).count() as f64;
            assert!(neg <= 6.0 * q && 6.0 * q <= nonpos);
        }
    }

    #[test]
    fn degenerate_ties_reach_optimum() {
        // heavily tied response
        let y = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 1.0, 2.0];
        let x = [0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 3.0, 3.0];
        let c = Matrix::from_columns(10, &[vec![1.0; 10], x.to_vec()]);
        for &q in &[0.2, 0.5, 0.8] {
            let fit = quantile_fit(&y, &c, &cfg(q)).unwrap();
            let mut best = f64::INFINITY;
            for i in 0..10 {
                for j in (i + 1)..10 {
                    if x[i] == x[j] {
                        continue;
                    }
                    let slope = (y[j] - y[i]) / (x[j] - x[i]);
                    let icpt = y[i] - slope * x[i];
                    let r: Vec<f64> = (0..10).map(|t| y[t] - icpt - slope * x[t]).collect();
                    best = best.min(pinball_loss(&r, q));
                }
            }
            assert!(
                (fit.loss() - best).abs() < 1e-10,
                "q={q}: {} vs {best}",
                fit.loss()
            );
        }
    }

    #[test]
    fn duplicated_columns_are_tolerated() {
        let x = [0.3, -1.2, 2.1, 0.8, -0.4, 1.5, 0.1];
        let y = [1.0, -0.5, 3.2, 0.4, 0.9, 2.8, 0.0];
        let c1 = Matrix::from_columns(7, &[vec![1.0; 7], x.to_vec()]);
        let c2 = Matrix::from_columns(7, &[vec![1.0; 7], x.to_vec(), vec![1.0; 7]]);
        let a = quantile_fit(&y, &c1, &cfg(0.3)).unwrap();
        let b = quantile_fit(&y, &c2, &cfg(0.3)).unwrap();
        for (u, v) in a.residuals.iter().zip(&b.residuals) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn square_system_interpolates() {
        let c = Matrix::from_columns(2, &[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let fit = quantile_fit(&[3.0, 5.0], &c, &cfg(0.5)).unwrap();
        assert!(fit.residuals.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn invalid_level() {
        assert!(quantile_fit(&[1.0, 2.0], &Matrix::ones(2), &cfg(1.0)).is_err());
    }
}
