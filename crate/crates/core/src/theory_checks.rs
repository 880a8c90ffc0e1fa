//! Executable checks of the facts the validity argument rests on: the
//! weighted column-sum bound for tournament matrices, the symmetry of the
//! comparison array under a relabelling of the errors, and the shift and
//! permutation invariances of the fitters.

use serde::Serialize;
use thiserror::Error;

use crate::framework::{Dataset, Evaluator, FrameworkError, ModelFitter, Permutation};
use crate::linalg::{least_squares_residuals, Matrix};
use crate::regressors::{
    huber_fit_fixed, huber_fit_mad, quantile_fit, FitSummary, HuberConfig, QuantileConfig,
};
use crate::rng::{Domain, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("A[{i}][{j}] + A[{j}][{i}] = {sum}, expected 1")]
    NotTournament { i: usize, j: usize, sum: f64 },
    #[error("entry {0} is outside [0, 1]")]
    EntryOutOfRange(f64),
    #[error("expected {expected} entries, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("weights must be non-negative and sum to 1 (sum = {0})")]
    Weights(f64),
    #[error("alpha must lie in [0, 1/2], got {0}")]
    Alpha(f64),
}

/// Square matrix with `A_ij + A_ji = 1`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TournamentMatrix {
    m: usize,
    a: Vec<f64>,
}

impl TournamentMatrix {
    pub fn new(m: usize, a: Vec<f64>) -> Result<Self, TheoryError> {
        if a.len() != m * m {
            return Err(TheoryError::Shape {
                expected: m * m,
                found: a.len(),
            });
        }
        if let Some(&v) = a.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(TheoryError::EntryOutOfRange(v));
        }
        for i in 0..m {
            for j in i..m {
                let sum = a[i * m + j] + a[j * m + i];
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(TheoryError::NotTournament { i, j, sum });
                }
            }
        }
        Ok(Self { m, a })
    }

    /// Strict upper triangle uniform on [0, 1], lower triangle `1 - A_ji`,
    /// diagonal 1/2.
    pub fn random(m: usize, s: &mut Stream) -> Self {
        let mut a = vec![0.5; m * m];
        for i in 0..m {
            for j in i + 1..m {
                let u = s.uniform();
                a[i * m + j] = u;
                a[j * m + i] = 1.0 - u;
            }
        }
        Self { m, a }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.m + j]
    }
}

fn check_weights(w: &[f64], m: usize, alpha: f64) -> Result<(), TheoryError> {
    if w.len() != m {
        return Err(TheoryError::Shape {
            expected: m,
            found: w.len(),
        });
    }
    let sum: f64 = w.iter().sum();
    if w.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(TheoryError::Weights(sum));
    }
    if !(0.0..=0.5).contains(&alpha) {
        return Err(TheoryError::Alpha(alpha));
    }
    Ok(())
}

/// `sum_i w_i 1{sum_j w_j A_ji <= alpha}`; never exceeds `2 alpha`.
pub fn weighted_small_column_mass(
    a: &TournamentMatrix,
    w: &[f64],
    alpha: f64,
) -> Result<f64, TheoryError> {
    check_weights(w, a.m, alpha)?;
    Ok(small_columns(a, w, alpha)
        .into_iter()
        .zip(w)
        .filter(|(small, _)| *small)
        .map(|(_, wi)| wi)
        .sum())
}

fn small_columns(a: &TournamentMatrix, w: &[f64], alpha: f64) -> Vec<bool> {
    (0..a.m)
        .map(|i| (0..a.m).map(|j| w[j] * a.get(j, i)).sum::<f64>() <= alpha)
        .collect()
}

/// `{i : sum_j w_j A_ij >= 1 - alpha}` as a membership mask.
pub fn large_row_set(
    a: &TournamentMatrix,
    w: &[f64],
    alpha: f64,
) -> Result<Vec<bool>, TheoryError> {
    check_weights(w, a.m, alpha)?;
    Ok((0..a.m)
        .map(|i| (0..a.m).map(|j| w[j] * a.get(i, j)).sum::<f64>() >= 1.0 - alpha)
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SweepSummary {
    pub instances: usize,
    /// Instances with mass above `2 alpha`.
    pub violations: usize,
    /// Instances whose row-based and column-based sets differ.
    pub set_mismatches: usize,
    /// Largest `mass - 2 alpha` seen.
    pub max_excess: f64,
}

/// Random tournaments with `1 <= m <= max_m`, weights `E_i / sum E` with
/// exponential `E`, and `alpha` uniform on [0, 1/2].
pub fn lemma_sweep(instances: usize, max_m: usize, seed: u64) -> SweepSummary {
    let mut out = SweepSummary {
        instances,
        max_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for k in 0..instances {
        let mut s = Stream::new(seed, Domain::Verification, k as u64);
        let m = 1 + s.below(max_m as u64) as usize;
        let a = TournamentMatrix::random(m, &mut s);
        let raw: Vec<f64> = (0..m).map(|_| -s.uniform().ln()).collect();
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        // fold the rounding residue into the largest weight
        let resid = 1.0 - w.iter().sum::<f64>();
        let imax = (0..m).max_by(|&i, &j| w[i].total_cmp(&w[j])).unwrap_or(0);
        w[imax] += resid;
        let alpha = 0.5 * s.uniform();

        let mass = weighted_small_column_mass(&a, &w, alpha).expect("valid instance");
        out.max_excess = out.max_excess.max(mass - 2.0 * alpha);
        out.violations += usize::from(mass > 2.0 * alpha);
        let rows = large_row_set(&a, &w, alpha).expect("valid instance");
        out.set_mismatches += usize::from(rows != small_columns(&a, &w, alpha));
    }
    out
}

/// `T(pi1, pi2; e) = omega(M(e, X_pi2, [Z_pi1, Z_pi2]))`.
pub fn comparison_entry(
    data: &Dataset,
    e: &[f64],
    fitter: &dyn ModelFitter,
    eval: &dyn Evaluator,
    pi1: &Permutation,
    pi2: &Permutation,
) -> Result<f64, FrameworkError> {
    let x = data.x().permute_rows(pi2.mapping());
    let controls = Matrix::hstack(&[
        &data.z().permute_rows(pi1.mapping()),
        &data.z().permute_rows(pi2.mapping()),
    ]);
    let fit = fitter.fit(e, &x, &controls)?;
    eval.evaluate(&fit)
}

/// Largest relative gap between `T(pi1, pi2; e_sigma)` and
/// `T(pi1 ∘ sigma^-1, pi2 ∘ sigma^-1; e)` over the given pairs, with `e`
/// the dataset's response.
pub fn comparison_array_gap(
    data: &Dataset,
    fitter: &dyn ModelFitter,
    eval: &dyn Evaluator,
    sigma: &Permutation,
    pairs: &[(Permutation, Permutation)],
) -> Result<f64, FrameworkError> {
    let e = data.y();
    let e_sigma = sigma.apply(e);
    let inv = sigma.inverse();
    let mut gap = 0.0_f64;
    for (p1, p2) in pairs {
        let left = comparison_entry(data, &e_sigma, fitter, eval, p1, p2)?;
        let right = comparison_entry(data, e, fitter, eval, &p1.compose(&inv), &p2.compose(&inv))?;
        gap = gap.max((left - right).abs() / left.abs().max(right.abs()).max(1.0));
    }
    Ok(gap)
}

/// Whether the comparison-array identity holds within `1e-8` on every pair.
pub fn comparison_array_symmetry_check(
    data: &Dataset,
    fitter: &dyn ModelFitter,
    eval: &dyn Evaluator,
    sigma: &Permutation,
    pairs: &[(Permutation, Permutation)],
) -> Result<bool, FrameworkError> {
    Ok(comparison_array_gap(data, fitter, eval, sigma, pairs)? <= 1e-8)
}

/// Maximum absolute difference of two summaries' residuals and scales,
/// relative to `max(1, ||reference||_inf)`.
pub fn summary_gap(a: &FitSummary, b: &FitSummary) -> f64 {
    let scale = a
        .sorted_residuals
        .iter()
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    let res = a
        .sorted_residuals
        .iter()
        .zip(&b.sorted_residuals)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let sc = match (a.scale, b.scale) {
        (Some(x), Some(y)) => (x - y).abs() / x.abs().max(1e-300),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    (res / scale).max(sc)
}

/// A named fitter on a `(y, C)` pair, returning its residual summary.
pub type RegressorFn = fn(&[f64], &Matrix) -> FitSummary;

fn ols(y: &[f64], c: &Matrix) -> FitSummary {
    FitSummary::from_residuals(
        least_squares_residuals(y, c).expect("valid"),
        None,
        Default::default(),
    )
}

fn huber_mad(y: &[f64], c: &Matrix) -> FitSummary {
    huber_fit_mad(y, c, &HuberConfig::default())
        .expect("valid")
        .into_summary()
}

fn huber_fixed(y: &[f64], c: &Matrix) -> FitSummary {
    huber_fit_fixed(y, c, 0.7, &HuberConfig::default())
        .expect("valid")
        .into_summary()
}

fn quantile_q30(y: &[f64], c: &Matrix) -> FitSummary {
    let fit = quantile_fit(y, c, &QuantileConfig::new(0.3)).expect("valid");
    FitSummary::from_residuals(fit.residuals, None, Default::default())
}

/// The fitters covered by [`spot_checks`], with their Condition-1 tolerance.
pub const REGRESSORS: [(&str, RegressorFn, f64); 4] = [
    ("ols", ols, 1e-6),
    ("huber-mad", huber_mad, 1e-6),
    ("huber-fixed", huber_fixed, 1e-6),
    ("quantile(0.3)", quantile_q30, 1e-8),
];

/// Heavy-tailed random instance: `n x k` design with an intercept.
pub fn random_instance(s: &mut Stream, n: usize, k: usize) -> (Vec<f64>, Matrix) {
    let mut cols = vec![vec![1.0; n]];
    for _ in 1..k {
        cols.push((0..n).map(|_| s.student_t3()).collect());
    }
    let y = (0..n).map(|_| s.student_t3()).collect();
    (y, Matrix::from_columns(n, &cols))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Condition 1 (shift), Condition 2 (row symmetry) and residual
/// equivariance for each regressor, plus the lemma sweep.
pub fn spot_checks(instances: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for (name, fit, tol) in REGRESSORS {
        let (mut shift, mut sym) = (0.0_f64, 0.0_f64);
        for k in 0..instances {
            let mut s = Stream::new(seed, Domain::Verification, (1 << 20) + k as u64);
            let n = 12 + s.below(20) as usize;
            let (y, c) = random_instance(&mut s, n, 3);
            let base = fit(&y, &c);
            let gamma: Vec<f64> = (0..c.cols()).map(|_| 3.0 * s.normal()).collect();
            let shifted: Vec<f64> = y
                .iter()
                .zip(c.mul_vec(&gamma))
                .map(|(a, b)| a + b)
                .collect();
            shift = shift.max(summary_gap(&base, &fit(&shifted, &c)));
            let sigma = Permutation::new(s.permutation(n)).expect("bijection");
            let permuted = fit(&sigma.apply(&y), &c.permute_rows(sigma.mapping()));
            sym = sym.max(summary_gap(&base, &permuted));
        }
        out.push(CheckOutcome {
            name: format!("shift invariance: {name}"),
            passed: shift <= tol,
            detail: format!("max gap {shift:.3e} over {instances} instances (tolerance {tol:e})"),
        });
        out.push(CheckOutcome {
            name: format!("row-permutation symmetry: {name}"),
            passed: sym <= 1e-8,
            detail: format!("max gap {sym:.3e} over {instances} instances (tolerance 1e-8)"),
        });
    }

    let mut eq = 0.0_f64;
    for k in 0..instances {
        let mut s = Stream::new(seed, Domain::Verification, (2 << 20) + k as u64);
        let (y, c) = random_instance(&mut s, 25, 4);
        let pi = Permutation::new(s.permutation(25)).expect("bijection");
        let cfg = HuberConfig::default();
        let left = huber_fit_mad(&pi.apply(&y), &c, &cfg)
            .expect("valid")
            .residuals;
        let inner = huber_fit_mad(&y, &c.permute_rows(pi.inverse().mapping()), &cfg)
            .expect("valid")
            .residuals;
        let right = pi.apply(&inner);
        let norm = y.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let gap = left
            .iter()
            .zip(&right)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / norm;
        eq = eq.max(gap);
    }
    out.push(CheckOutcome {
        name: "huber residual equivariance".into(),
        passed: eq <= 1e-8,
        detail: format!("max gap {eq:.3e} over {instances} instances (tolerance 1e-8)"),
    });

    let sweep = lemma_sweep(10_000, 8, seed);
    out.push(CheckOutcome {
        name: "tournament column-mass bound".into(),
        passed: sweep.violations == 0 && sweep.set_mismatches == 0,
        detail: format!(
            "{} instances, {} violations, {} set mismatches, max excess {:.3e}",
            sweep.instances, sweep.violations, sweep.set_mismatches, sweep.max_excess
        ),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_half_has_no_small_columns() {
        let a = TournamentMatrix::new(3, vec![0.5; 9]).unwrap();
        let mass = weighted_small_column_mass(&a, &[0.2, 0.3, 0.5], 0.3).unwrap();
        assert_eq!(mass, 0.0);
    }

    /// m = 2, w = (1/2, 1/2), A_12 = 1: column sums (0.25, 0.75).
    #[test]
    fn two_by_two_is_tight() {
        let a = TournamentMatrix::new(2, vec![0.5, 1.0, 0.0, 0.5]).unwrap();
        let w = [0.5, 0.5];
        let mass = weighted_small_column_mass(&a, &w, 0.25).unwrap();
        assert_eq!(mass, 0.5);
        assert_eq!(large_row_set(&a, &w, 0.25).unwrap(), vec![true, false]);
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(TournamentMatrix::new(2, vec![0.5, 0.7, 0.7, 0.5]).is_err());
        let a = TournamentMatrix::new(1, vec![0.5]).unwrap();
        assert!(weighted_small_column_mass(&a, &[0.9], 0.1).is_err());
        assert!(weighted_small_column_mass(&a, &[1.0], 0.6).is_err());
    }

    #[test]
    fn short_sweep_is_clean() {
        let s = lemma_sweep(500, 8, 11);
        assert_eq!(s.violations, 0);
        assert_eq!(s.set_mismatches, 0);
    }
}
