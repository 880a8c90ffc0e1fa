//! The permutation engine: for each random permutation `pi` of the rows,
//! fit `y` on `[X, Z, Z_pi]` and on `[X_pi, Z, Z_pi]`, evaluate both fits,
//! and count how often the original fit is no better than the permuted one.
//! The p-value `(1 + sum A_b) / (1 + B)` satisfies `P(p <= alpha) <= 2 alpha`
//! under the null whenever the fitter is shift invariant and symmetric.
//!
//! Row permutations act as `(A_pi)_i = A_{pi(i)}`.

mod ci;
mod fitters;

pub use ci::{invert_ci, ConfidenceInterval, GridPoint};
pub use fitters::{Evaluator, EvaluatorSpec, FitterSpec, Method, ModelFitter};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::regressors::{FitError, FitSummary, QuantileConfig};
use crate::rng::{Domain, Stream};

/// Default number of random permutations.
pub const DEFAULT_PERMUTATIONS: usize = 999;

/// Relative gap below which two evaluations count as tied.
const TIE_RTOL: f64 = 1e-9;

pub const GUARANTEE_NOTE: &str =
    "under the null, P(p <= alpha) <= 2 * alpha for every alpha; p is reported on the nominal scale";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameworkError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("the evaluator needs a fitted scale but the fitter reports none")]
    MissingScale,
    #[error("the evaluator needs per-group spreads but the fitter reports none")]
    MissingSpread,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no grid value has p-value above {alpha} (largest p-value {max_p})")]
    EmptyAcceptance { alpha: f64, max_p: f64 },
}

/// Response `y`, covariates of interest `x` and controls `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Matrix,
    z: Matrix,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Matrix, z: Matrix) -> Result<Self, FrameworkError> {
        let n = y.len();
        if n < 2 {
            return Err(FrameworkError::InvalidDataset(format!(
                "need at least 2 rows, got {n}"
            )));
        }
        if x.rows() != n || z.rows() != n {
            return Err(FrameworkError::InvalidDataset(format!(
                "row counts differ: y has {n}, x has {}, z has {}",
                x.rows(),
                z.rows()
            )));
        }
        if x.cols() == 0 {
            return Err(FrameworkError::InvalidDataset(
                "x needs at least one column".into(),
            ));
        }
        if !y.iter().all(|v| v.is_finite()) || !x.is_finite() || !z.is_finite() {
            return Err(FrameworkError::InvalidDataset("non-finite entry".into()));
        }
        Ok(Self { y, x, z })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Same covariates, new response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self, FrameworkError> {
        Self::new(y, self.x.clone(), self.z.clone())
    }

    /// All rows permuted jointly by `sigma`.
    pub fn permute_rows(&self, sigma: &Permutation) -> Self {
        Self {
            y: sigma.apply(&self.y),
            x: self.x.permute_rows(sigma.mapping()),
            z: self.z.permute_rows(sigma.mapping()),
        }
    }

    /// `x` is a single 0/1 column with both values present.
    pub fn is_two_group(&self) -> bool {
        let col = self.x.column(0);
        self.x.cols() == 1
            && col.iter().all(|&v| v == 0.0 || v == 1.0)
            && col.contains(&0.0)
            && col.contains(&1.0)
    }
}

/// A bijection of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self, FrameworkError> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || std::mem::replace(&mut seen[m], true) {
                return Err(FrameworkError::InvalidPermutation(format!(
                    "{mapping:?} is not a bijection of 0..{n}"
                )));
            }
        }
        Ok(Self(mapping))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &m) in self.0.iter().enumerate() {
            inv[m] = i;
        }
        Self(inv)
    }

    /// `self ∘ other`, i.e. `i -> self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Self {
        assert_eq!(self.len(), other.len());
        Self(other.0.iter().map(|&j| self.0[j]).collect())
    }

    /// `v_pi`: entry `i` of the result is `v[pi(i)]`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.len());
        self.0.iter().map(|&m| v[m]).collect()
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = FrameworkError;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

/// Permutation `b` of the stream keyed by `seed`.
pub fn permutation_at(n: usize, seed: u64, b: usize) -> Permutation {
    Permutation(Stream::new(seed, Domain::Permutation, b as u64).permutation(n))
}

/// `count` independent uniform permutations of `0..n`; permutation `b`
/// depends only on `(seed, b)`.
pub fn sample_permutations(n: usize, count: usize, seed: u64) -> Vec<Permutation> {
    (0..count).map(|b| permutation_at(n, seed, b)).collect()
}

/// `(M_Orig, M_Perm)`: fits of `y` on `[X, Z, Z_pi]` and `[X_pi, Z, Z_pi]`.
pub fn paired_fit(
    data: &Dataset,
    pi: &Permutation,
    fitter: &dyn ModelFitter,
) -> Result<(FitSummary, FitSummary), FrameworkError> {
    if pi.len() != data.n() {
        return Err(FrameworkError::InvalidPermutation(format!(
            "permutation of {} elements applied to {} rows",
            pi.len(),
            data.n()
        )));
    }
    let z_pi = data.z.permute_rows(pi.mapping());
    let controls = Matrix::hstack(&[&data.z, &z_pi]);
    let x_pi = data.x.permute_rows(pi.mapping());
    Ok(fitter.fit_pair(&data.y, &data.x, &x_pi, &controls)?)
}

/// How a tie `omega(M_Orig) == omega(M_Perm)` is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Ties count fully toward the p-value.
    #[default]
    Conservative,
    /// Ties count one half.
    HalfWeight,
}

/// Comparison indicator `A` for one permutation.
pub fn compare(orig: f64, perm: f64, ties: TieRule) -> f64 {
    let tied = orig == perm || (orig - perm).abs() <= TIE_RTOL * orig.abs().max(perm.abs());
    match (tied, ties) {
        (true, TieRule::Conservative) => 1.0,
        (true, TieRule::HalfWeight) => 0.5,
        (false, _) if orig > perm => 1.0,
        (false, _) => 0.0,
    }
}

/// Counts of non-fatal fitter diagnostics over all fits of a test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub degenerate_scale: usize,
    pub not_converged: usize,
    pub clamped_spread: usize,
}

impl Diagnostics {
    fn record(&mut self, s: &FitSummary) {
        self.degenerate_scale += usize::from(s.flags.degenerate_scale);
        self.not_converged += usize::from(!s.flags.converged);
        self.clamped_spread += usize::from(s.spread.is_some_and(|g| g.clamped));
    }

    fn merge(mut self, other: Self) -> Self {
        self.degenerate_scale += other.degenerate_scale;
        self.not_converged += other.not_converged;
        self.clamped_spread += other.clamped_spread;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub p_value: f64,
    /// Number of permutations `B`.
    pub b: usize,
    /// `A_1, ..., A_B`.
    pub indicators: Vec<f64>,
    pub omega_orig: Vec<f64>,
    pub omega_perm: Vec<f64>,
    pub seed: u64,
    pub fitter: String,
    pub evaluator: String,
    pub ties: TieRule,
    pub diagnostics: Diagnostics,
    pub alpha_note: String,
}

impl TestReport {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// Permutation test of `x` given `z` with the default conservative ties.
pub fn palmrt_test(
    data: &Dataset,
    fitter: &dyn ModelFitter,
    eval: &dyn Evaluator,
    b: usize,
    seed: u64,
) -> Result<TestReport, FrameworkError> {
    palmrt_test_with_ties(data, fitter, eval, b, seed, TieRule::Conservative)
}

pub fn palmrt_test_with_ties(
    data: &Dataset,
    fitter: &dyn ModelFitter,
    eval: &dyn Evaluator,
    b: usize,
    seed: u64,
    ties: TieRule,
) -> Result<TestReport, FrameworkError> {
    if b == 0 {
        return Err(FrameworkError::InvalidArgument(
            "number of permutations must be at least 1".into(),
        ));
    }
    let n = data.n();
    let rows = (0..b)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64, Diagnostics), FrameworkError> {
            let pi = permutation_at(n, seed, i);
            let (orig, perm) = paired_fit(data, &pi, fitter)?;
            let mut d = Diagnostics::default();
            d.record(&orig);
            d.record(&perm);
            Ok((eval.evaluate(&orig)?, eval.evaluate(&perm)?, d))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut indicators = Vec::with_capacity(b);
    let mut omega_orig = Vec::with_capacity(b);
    let mut omega_perm = Vec::with_capacity(b);
    let mut diagnostics = Diagnostics::default();
    for (o, p, d) in rows {
        indicators.push(compare(o, p, ties));
        omega_orig.push(o);
        omega_perm.push(p);
        diagnostics = diagnostics.merge(d);
    }
    let total: f64 = indicators.iter().sum();
    Ok(TestReport {
        p_value: (1.0 + total) / (1.0 + b as f64),
        b,
        indicators,
        omega_orig,
        omega_perm,
        seed,
        fitter: fitter.label(),
        evaluator: eval.label(),
        ties,
        diagnostics,
        alpha_note: GUARANTEE_NOTE.into(),
    })
}

/// Test for a difference in conditional inter-quantile spread between the
/// two groups of the 0/1 column `x`.
pub fn dispersion_test(
    data: &Dataset,
    low: QuantileConfig,
    high: QuantileConfig,
    b: usize,
    seed: u64,
) -> Result<TestReport, FrameworkError> {
    if !data.is_two_group() {
        return Err(FrameworkError::InvalidDataset(
            "the dispersion test needs x to be one 0/1 column with both groups present".into(),
        ));
    }
    let fitter = FitterSpec::QuantilePair { low, high };
    fitter.validate()?;
    palmrt_test(data, &fitter, &EvaluatorSpec::IqrLogRatio, b, seed)
}
