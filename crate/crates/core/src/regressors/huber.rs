//! Huber M-estimation by iteratively reweighted least squares.
//!
//! Both variants start from the OLS residuals `R^0` and repeatedly replace
//! `R^k` by the residuals of a weighted regression of `R^k` on the design,
//! with weights `min(1, delta / (|R_i^k| / s))`. The MAD variant re-estimates
//! `s = mad_factor * median|R^k|` every iteration; the fixed variant keeps
//! the supplied scale. Iteration stops once
//! `||R^{k+1} - R^k|| / ||R^k|| < rel_tol` or after `max_iter` updates.

use super::{huber_rho, FitError, FitFlags, FitSummary, HuberConfig};
use crate::linalg::{median, norm2, LinalgError, Matrix, QrFactor, WeightedSolver};

/// Observation-aligned output of a Huber fit.
#[derive(Debug, Clone, PartialEq)]
pub struct HuberFit {
    pub residuals: Vec<f64>,
    /// Final scale (`s^Final`).
    pub scale: f64,
    pub flags: FitFlags,
    /// `sum_i rho(R_i^k / s^k)` for each iterate, final iterate last.
    pub loss_trace: Vec<f64>,
}

impl HuberFit {
    pub fn summary(&self) -> FitSummary {
        FitSummary::from_residuals(self.residuals.clone(), Some(self.scale), self.flags)
    }

    pub fn into_summary(self) -> FitSummary {
        FitSummary::from_residuals(self.residuals, Some(self.scale), self.flags)
    }
}

#[derive(Clone, Copy)]
enum Scale {
    Mad,
    Fixed(f64),
}

/// Huber regression with MAD scale re-estimated every iteration.
pub fn huber_fit_mad(y: &[f64], c: &Matrix, cfg: &HuberConfig) -> Result<HuberFit, FitError> {
    irls(y, c, cfg, Scale::Mad)
}

/// Huber regression with the scale held at `s`.
pub fn huber_fit_fixed(
    y: &[f64],
    c: &Matrix,
    s: f64,
    cfg: &HuberConfig,
) -> Result<HuberFit, FitError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(FitError::InvalidScale(s));
    }
    irls(y, c, cfg, Scale::Fixed(s))
}

fn irls(y: &[f64], c: &Matrix, cfg: &HuberConfig, mode: Scale) -> Result<HuberFit, FitError> {
    cfg.validate()?;
    let n = y.len();
    if n < 2 {
        return Err(FitError::TooFewObservations { needed: 2, got: n });
    }
    if c.rows() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: c.rows(),
            found: n,
        }
        .into());
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite("response").into());
    }
    if !c.is_finite() {
        return Err(LinalgError::NonFinite("design").into());
    }

    let qr = QrFactor::pivoted(c);
    let mut r = qr.residuals(y);
    let basis = qr.independent_columns();
    let mut solver = (!basis.is_empty()).then(|| WeightedSolver::new(c.select_columns(&basis)));

    let floor = (1e-8 * r.iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(1e-12);
    let delta = cfg.delta;
    let mut flags = FitFlags::default();
    let mut trace = Vec::new();
    let mut abs = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut s = match mode {
        Scale::Fixed(s) => s,
        Scale::Mad => 0.0,
    };

    for _ in 0..cfg.max_iter {
        if let Scale::Mad = mode {
            for (a, v) in abs.iter_mut().zip(&r) {
                *a = v.abs();
            }
            let m = cfg.mad_factor * median(&abs)?;
            // a MAD at rounding level counts as zero
            s = if m > floor {
                m
            } else {
                flags.degenerate_scale = true;
                floor
            };
        }
        trace.push(r.iter().map(|v| huber_rho(v / s, delta)).sum::<f64>());
        let norm_r = norm2(&r);
        let Some(solver) = solver.as_mut() else {
            flags.converged = true;
            break;
        };
        if norm_r == 0.0 {
            flags.converged = true;
            break;
        }
        let cut = delta * s;
        for (wi, v) in w.iter_mut().zip(&r) {
            let a = v.abs();
            *wi = if a <= cut { 1.0 } else { cut / a };
        }
        solver
            .residuals_into(&r, &w, &mut next)
            .map_err(|_| FitError::RankFailure)?;
        let change = r
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / norm_r;
        std::mem::swap(&mut r, &mut next);
        flags.iterations += 1;
        if change < cfg.rel_tol {
            flags.converged = true;
            break;
        }
    }
    trace.push(r.iter().map(|v| huber_rho(v / s, delta)).sum::<f64>());

    Ok(HuberFit {
        residuals: r,
        scale: s,
        flags,
        loss_trace: trace,
    })
}
