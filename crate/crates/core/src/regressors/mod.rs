//! Model-fitting algorithms: ordinary least squares, Huber IRLS with MAD
//! scale, Huber IRLS with a fixed scale, and linear quantile regression.
//!
//! Every fitter depends on the response only through its least-squares
//! residuals on the design and treats observations symmetrically, which is
//! what makes the permutation tests built on top of them exact.

mod huber;
mod quantile;

pub use huber::{huber_fit_fixed, huber_fit_mad, HuberFit};
pub use quantile::{quantile_fit, quantile_fit_many, QuantileFit};

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{least_squares_residuals, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("quantile solver did not converge within {0} iterations")]
    QuantileNotConverged(usize),
    #[error("design lost rank inside the solver")]
    RankFailure,
}

/// Per-group mean spread produced by the paired quantile fitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupSpread {
    /// Mean spread over observations with indicator 0.
    pub control: f64,
    /// Mean spread over observations with indicator 1.
    pub case: f64,
    /// A zero group spread was clamped away from zero.
    pub clamped: bool,
}

/// Non-fatal fitter diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FitFlags {
    pub iterations: usize,
    pub converged: bool,
    /// The MAD scale collapsed to zero and was clamped.
    pub degenerate_scale: bool,
}

/// What a fitter reports: residual order statistics plus an optional scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub sorted_residuals: Vec<f64>,
    pub scale: Option<f64>,
    pub spread: Option<GroupSpread>,
    pub flags: FitFlags,
}

impl FitSummary {
    pub fn from_residuals(mut residuals: Vec<f64>, scale: Option<f64>, flags: FitFlags) -> Self {
        residuals.sort_by(f64::total_cmp);
        Self {
            sorted_residuals: residuals,
            scale,
            spread: None,
            flags,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct HuberConfig {
    pub delta: f64,
    pub mad_factor: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for HuberConfig {
    fn default() -> Self {
        Self {
            delta: 1.345,
            mad_factor: 1.4826,
            rel_tol: 1e-8,
            max_iter: 200,
        }
    }
}

impl HuberConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(FitError::InvalidConfig(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if !(self.mad_factor > 0.0 && self.mad_factor.is_finite()) {
            return Err(FitError::InvalidConfig(format!(
                "mad_factor must be positive, got {}",
                self.mad_factor
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(FitError::InvalidConfig(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(FitError::InvalidConfig(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct QuantileConfig {
    /// Quantile level in (0, 1).
    pub q: f64,
    /// Relative tolerance: a residual `y_i - a_i b` counts as zero when it is
    /// below `tol * (|y_i| + sum_j |a_ij b_j|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl QuantileConfig {
    pub fn new(q: f64) -> Self {
        Self {
            q,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(FitError::InvalidConfig(format!(
                "quantile level must be in (0, 1), got {}",
                self.q
            )));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(FitError::InvalidConfig(format!(
                "tol must be in (0, 1), got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(FitError::InvalidConfig(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Huber's loss: quadratic inside `[-delta, delta]`, linear outside.
#[inline]
pub fn huber_rho(t: f64, delta: f64) -> f64 {
    let a = t.abs();
    if a <= delta {
        0.5 * t * t
    } else {
        a * delta - 0.5 * delta * delta
    }
}

/// OLS residual summary (no scale).
pub fn ols_fit(y: &[f64], c: &Matrix) -> Result<FitSummary, FitError> {
    let r = least_squares_residuals(y, c)?;
    Ok(FitSummary::from_residuals(
        r,
        None,
        FitFlags {
            iterations: 0,
            converged: true,
            degenerate_scale: false,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_rho_values() {
        assert_eq!(huber_rho(0.0, 1.345), 0.0);
        assert!((huber_rho(1.345, 1.345) - 0.904_512_5).abs() < 1e-12);
        assert!((huber_rho(2.690, 1.345) - 2.713_537_5).abs() < 1e-12);
        assert!((huber_rho(-2.690, 1.345) - 2.713_537_5).abs() < 1e-12);
    }

    #[test]
    fn huber_rho_is_c1_at_threshold() {
        let d = 1.345;
        let h = 1e-7;
        let left = (huber_rho(d, d) - huber_rho(d - h, d)) / h;
        let right = (huber_rho(d + h, d) - huber_rho(d, d)) / h;
        assert!((left - right).abs() < 1e-6);
        assert!((huber_rho(d + 1e-12, d) - huber_rho(d - 1e-12, d)).abs() < 1e-11);
    }

    #[test]
    fn config_validation() {
        assert!(HuberConfig::default().validate().is_ok());
        let bad = HuberConfig {
            delta: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(QuantileConfig::new(0.0).validate().is_err());
        assert!(QuantileConfig::new(1.0).validate().is_err());
        assert!(QuantileConfig::new(0.9).validate().is_ok());
    }
}
