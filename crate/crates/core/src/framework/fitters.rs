//! Fitter and evaluator contracts plus the built-in implementations.

use serde::{Deserialize, Serialize};

use super::FrameworkError;
use crate::linalg::{norm2, Matrix};
use crate::regressors::{
    huber_fit_fixed, huber_fit_mad, huber_rho, ols_fit, quantile_fit_many, FitError, FitFlags,
    FitSummary, GroupSpread, HuberConfig, QuantileConfig,
};

/// Residuals smaller than this fraction of `||y||` are rounding noise and
/// are set to exactly zero, so that fits of a response lying in the design
/// space tie exactly.
const ROUNDING_ZERO: f64 = 1e-10;

/// A model-fitting algorithm `M(y, x, controls)`, fitting `y` on
/// `[x, controls]`.
///
/// Implementations must be invariant to shifting `y` by anything in the
/// span of `[x, controls]` and to permuting the rows of all inputs jointly;
/// the permutation p-value is only valid under those two conditions.
pub trait ModelFitter: Sync {
    fn fit(&self, y: &[f64], x: &Matrix, controls: &Matrix) -> Result<FitSummary, FitError>;

    /// Fits `y` on `[x_orig, controls]` and on `[x_perm, controls]`.
    fn fit_pair(
        &self,
        y: &[f64],
        x_orig: &Matrix,
        x_perm: &Matrix,
        controls: &Matrix,
    ) -> Result<(FitSummary, FitSummary), FitError> {
        Ok((
            self.fit(y, x_orig, controls)?,
            self.fit(y, x_perm, controls)?,
        ))
    }

    fn label(&self) -> String;
}

/// A model-evaluation procedure: smaller values mean a better fit.
pub trait Evaluator: Sync {
    fn evaluate(&self, summary: &FitSummary) -> Result<f64, FrameworkError>;

    fn label(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitterSpec {
    /// Least squares on `[x, controls]`. With `prelim_scale`, the summary
    /// also carries the Huber/MAD scale of `y` on `controls` alone.
    Ols { prelim_scale: Option<HuberConfig> },
    /// Huber/MAD regression on `controls` for the scale, then fixed-scale
    /// Huber fits of the augmented designs.
    HuberMadPrelim(HuberConfig),
    /// Low and high quantile regressions; the summary carries the mean
    /// per-observation spread of each indicator group.
    QuantilePair {
        low: QuantileConfig,
        high: QuantileConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorSpec {
    L1,
    L2,
    /// `sum_i rho(r_i / s)` with the fitter's scale `s`.
    HuberScaled {
        delta: f64,
    },
    /// `-|log(spread_case / spread_control)|`.
    IqrLogRatio,
}

fn combined(x: &Matrix, controls: &Matrix) -> Matrix {
    Matrix::hstack(&[x, controls])
}

fn snap_rounding(mut summary: FitSummary, y: &[f64]) -> FitSummary {
    let cut = ROUNDING_ZERO * norm2(y);
    for r in summary.sorted_residuals.iter_mut() {
        if r.abs() <= cut {
            *r = 0.0;
        }
    }
    summary
}

fn prelim_scale(y: &[f64], controls: &Matrix, cfg: &HuberConfig) -> Result<(f64, bool), FitError> {
    let fit = huber_fit_mad(y, controls, cfg)?;
    Ok((fit.scale, fit.flags.degenerate_scale))
}

fn merge_degenerate(mut summary: FitSummary, degenerate: bool) -> FitSummary {
    summary.flags.degenerate_scale |= degenerate;
    summary
}

impl FitterSpec {
    pub fn huber() -> Self {
        FitterSpec::HuberMadPrelim(HuberConfig::default())
    }

    pub fn ols() -> Self {
        FitterSpec::Ols { prelim_scale: None }
    }

    pub fn ols_with_scale() -> Self {
        FitterSpec::Ols {
            prelim_scale: Some(HuberConfig::default()),
        }
    }

    pub fn quantile_pair(low: f64, high: f64) -> Self {
        FitterSpec::QuantilePair {
            low: QuantileConfig::new(low),
            high: QuantileConfig::new(high),
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        match self {
            FitterSpec::Ols { prelim_scale } => {
                prelim_scale.as_ref().map_or(Ok(()), HuberConfig::validate)
            }
            FitterSpec::HuberMadPrelim(cfg) => cfg.validate(),
            FitterSpec::QuantilePair { low, high } => {
                low.validate()?;
                high.validate()?;
                if low.q >= high.q {
                    return Err(FitError::InvalidConfig(format!(
                        "low quantile {} must be below high quantile {}",
                        low.q, high.q
                    )));
                }
                Ok(())
            }
        }
    }

    fn ols_summary(
        &self,
        y: &[f64],
        x: &Matrix,
        controls: &Matrix,
        scale: Option<(f64, bool)>,
    ) -> Result<FitSummary, FitError> {
        let mut s = ols_fit(y, &combined(x, controls))?;
        if let Some((scale, degenerate)) = scale {
            s.scale = Some(scale);
            s.flags.degenerate_scale = degenerate;
        }
        Ok(snap_rounding(s, y))
    }
}

impl ModelFitter for FitterSpec {
    fn fit(&self, y: &[f64], x: &Matrix, controls: &Matrix) -> Result<FitSummary, FitError> {
        match self {
            FitterSpec::Ols { prelim_scale: cfg } => {
                let scale = cfg
                    .as_ref()
                    .map(|c| prelim_scale(y, controls, c))
                    .transpose()?;
                self.ols_summary(y, x, controls, scale)
            }
            FitterSpec::HuberMadPrelim(cfg) => {
                let (s, degenerate) = prelim_scale(y, controls, cfg)?;
                let fit = huber_fit_fixed(y, &combined(x, controls), s, cfg)?;
                Ok(snap_rounding(
                    merge_degenerate(fit.into_summary(), degenerate),
                    y,
                ))
            }
            FitterSpec::QuantilePair { low, high } => quantile_pair(y, x, controls, low, high),
        }
    }

    fn fit_pair(
        &self,
        y: &[f64],
        x_orig: &Matrix,
        x_perm: &Matrix,
        controls: &Matrix,
    ) -> Result<(FitSummary, FitSummary), FitError> {
        match self {
            FitterSpec::Ols { prelim_scale: cfg } => {
                let scale = cfg
                    .as_ref()
                    .map(|c| prelim_scale(y, controls, c))
                    .transpose()?;
                Ok((
                    self.ols_summary(y, x_orig, controls, scale)?,
                    self.ols_summary(y, x_perm, controls, scale)?,
                ))
            }
            FitterSpec::HuberMadPrelim(cfg) => {
                let (s, degenerate) = prelim_scale(y, controls, cfg)?;
                let one = |x: &Matrix| -> Result<FitSummary, FitError> {
                    let fit = huber_fit_fixed(y, &combined(x, controls), s, cfg)?;
                    Ok(snap_rounding(
                        merge_degenerate(fit.into_summary(), degenerate),
                        y,
                    ))
                };
                Ok((one(x_orig)?, one(x_perm)?))
            }
            FitterSpec::QuantilePair { .. } => Ok((
                self.fit(y, x_orig, controls)?,
                self.fit(y, x_perm, controls)?,
            )),
        }
    }

    fn label(&self) -> String {
        match self {
            FitterSpec::Ols { prelim_scale: None } => "ols".into(),
            FitterSpec::Ols {
                prelim_scale: Some(_),
            } => "ols+prelim-scale".into(),
            FitterSpec::HuberMadPrelim(cfg) => {
                format!("huber-fixed-prelim-mad(delta={})", cfg.delta)
            }
            FitterSpec::QuantilePair { low, high } => {
                format!("quantile-pair({},{})", low.q, high.q)
            }
        }
    }
}

/// Fits both quantile levels and averages the per-observation spread
/// `|Q_high - Q_low|` within each group of the 0/1 column `x`.
fn quantile_pair(
    y: &[f64],
    x: &Matrix,
    controls: &Matrix,
    low: &QuantileConfig,
    high: &QuantileConfig,
) -> Result<FitSummary, FitError> {
    if x.cols() != 1 || !x.column(0).iter().all(|&v| v == 0.0 || v == 1.0) {
        return Err(FitError::InvalidConfig(
            "the quantile pair fitter needs a single 0/1 indicator column".into(),
        ));
    }
    let fits = quantile_fit_many(y, &combined(x, controls), &[*low, *high])?;
    let cut = ROUNDING_ZERO * norm2(y);
    let spread: Vec<f64> = fits[0]
        .residuals
        .iter()
        .zip(&fits[1].residuals)
        .map(|(a, b)| {
            let d = (b - a).abs();
            if d <= cut {
                0.0
            } else {
                d
            }
        })
        .collect();

    let (mut sum, mut count) = ([0.0; 2], [0usize; 2]);
    for (&g, &s) in x.column(0).iter().zip(&spread) {
        let g = g as usize;
        sum[g] += s;
        count[g] += 1;
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(FitError::InvalidConfig(
            "both indicator groups must be nonempty".into(),
        ));
    }
    let overall = spread.iter().sum::<f64>() / spread.len() as f64;
    let floor = (1e-12 * overall).max(f64::MIN_POSITIVE);
    let mut clamped = false;
    let mut mean = |g: usize| {
        let m = sum[g] / count[g] as f64;
        if m > 0.0 {
            m
        } else {
            clamped = true;
            floor
        }
    };
    let group = GroupSpread {
        control: mean(0),
        case: mean(1),
        clamped,
    };
    let flags = FitFlags {
        iterations: fits[0].iterations + fits[1].iterations,
        converged: !(fits[0].uncertified || fits[1].uncertified),
        degenerate_scale: false,
    };
    let mut summary = FitSummary::from_residuals(spread, None, flags);
    summary.spread = Some(group);
    Ok(summary)
}

impl EvaluatorSpec {
    pub fn huber() -> Self {
        EvaluatorSpec::HuberScaled { delta: 1.345 }
    }
}

impl Evaluator for EvaluatorSpec {
    fn evaluate(&self, summary: &FitSummary) -> Result<f64, FrameworkError> {
        let r = &summary.sorted_residuals;
        match *self {
            EvaluatorSpec::L1 => Ok(r.iter().map(|v| v.abs()).sum()),
            EvaluatorSpec::L2 => Ok(r.iter().map(|v| v * v).sum()),
            EvaluatorSpec::HuberScaled { delta } => {
                let s = summary.scale.ok_or(FrameworkError::MissingScale)?;
                Ok(r.iter().map(|v| huber_rho(v / s, delta)).sum())
            }
            EvaluatorSpec::IqrLogRatio => {
                let g = summary.spread.ok_or(FrameworkError::MissingSpread)?;
                Ok(-(g.case / g.control).ln().abs())
            }
        }
    }

    fn label(&self) -> String {
        match self {
            EvaluatorSpec::L1 => "l1".into(),
            EvaluatorSpec::L2 => "l2".into(),
            EvaluatorSpec::HuberScaled { delta } => format!("huber-scaled(delta={delta})"),
            EvaluatorSpec::IqrLogRatio => "iqr-log-ratio".into(),
        }
    }
}

/// The named fitter/evaluator pairs compared in the power studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OLS-L2")]
    OlsL2,
    #[serde(rename = "OLS-L1")]
    OlsL1,
    #[serde(rename = "OLS-Huber")]
    OlsHuber,
    #[serde(rename = "Huber-Huber")]
    HuberHuber,
    #[serde(rename = "Dispersion")]
    Dispersion,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::OlsL2,
        Method::OlsL1,
        Method::OlsHuber,
        Method::HuberHuber,
        Method::Dispersion,
    ];

    pub fn fitter(self) -> FitterSpec {
        match self {
            Method::OlsL2 | Method::OlsL1 => FitterSpec::ols(),
            Method::OlsHuber => FitterSpec::ols_with_scale(),
            Method::HuberHuber => FitterSpec::huber(),
            Method::Dispersion => FitterSpec::quantile_pair(0.10, 0.90),
        }
    }

    pub fn evaluator(self) -> EvaluatorSpec {
        match self {
            Method::OlsL2 => EvaluatorSpec::L2,
            Method::OlsL1 => EvaluatorSpec::L1,
            Method::OlsHuber | Method::HuberHuber => EvaluatorSpec::huber(),
            Method::Dispersion => EvaluatorSpec::IqrLogRatio,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::OlsL2 => "OLS-L2",
            Method::OlsL1 => "OLS-L1",
            Method::OlsHuber => "OLS-Huber",
            Method::HuberHuber => "Huber-Huber",
            Method::Dispersion => "Dispersion",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(r: Vec<f64>, scale: Option<f64>) -> FitSummary {
        FitSummary::from_residuals(r, scale, FitFlags::default())
    }

    #[test]
    fn evaluator_values() {
        let s = summary(vec![3.0, -4.0], None);
        assert_eq!(EvaluatorSpec::L2.evaluate(&s).unwrap(), 25.0);
        assert_eq!(EvaluatorSpec::L1.evaluate(&s).unwrap(), 7.0);
        let s = summary(vec![0.5, 2.0], Some(1.0));
        let h = EvaluatorSpec::huber().evaluate(&s).unwrap();
        assert!((h - 1.910_487_5).abs() < 1e-12);
        let zero = summary(vec![0.0; 3], Some(2.0));
        for e in [EvaluatorSpec::L1, EvaluatorSpec::L2, EvaluatorSpec::huber()] {
            assert_eq!(e.evaluate(&zero).unwrap(), 0.0);
        }
    }

    #[test]
    fn huber_evaluator_needs_scale() {
        let s = summary(vec![1.0], None);
        assert!(matches!(
            EvaluatorSpec::huber().evaluate(&s),
            Err(FrameworkError::MissingScale)
        ));
        assert!(matches!(
            EvaluatorSpec::IqrLogRatio.evaluate(&s),
            Err(FrameworkError::MissingSpread)
        ));
    }

    #[test]
    fn method_labels_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.label()));
        }
    }
}
