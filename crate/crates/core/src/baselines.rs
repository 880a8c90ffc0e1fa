//! Classical comparators: the partial F-test for `x` given `z`, and the
//! studentized (Koenker) Breusch-Pagan test for heteroskedasticity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{chi_square_sf, f_sf};
use crate::framework::Dataset;
use crate::linalg::{dot, rank, LinalgError, Matrix, QrFactor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("design [x, z] is rank deficient (rank {rank} of {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },
    #[error("no residual degrees of freedom: n = {n}, model rank = {rank}")]
    NoResidualDf { n: usize, rank: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalReport {
    pub test: String,
    pub statistic: f64,
    /// Numerator (or only) degrees of freedom.
    pub df1: f64,
    /// Denominator degrees of freedom, when the reference law has one.
    pub df2: Option<f64>,
    pub p_value: f64,
}

fn full_design(data: &Dataset) -> Result<Matrix, BaselineError> {
    let c = Matrix::hstack(&[data.x(), data.z()]);
    let r = rank(&c);
    if r < c.cols() {
        return Err(BaselineError::RankDeficient {
            rank: r,
            cols: c.cols(),
        });
    }
    if data.n() <= c.cols() {
        return Err(BaselineError::NoResidualDf {
            n: data.n(),
            rank: r,
        });
    }
    Ok(c)
}

fn rss(y: &[f64], c: &Matrix) -> f64 {
    let r = QrFactor::pivoted(c).residuals(y);
    dot(&r, &r)
}

/// `F = [(RSS_0 - RSS_1) / d] / [RSS_1 / (n - d - p)]` comparing `y ~ z`
/// with `y ~ x + z`, referred to `F(d, n - d - p)`.
pub fn partial_f_test(data: &Dataset) -> Result<ClassicalReport, BaselineError> {
    let c = full_design(data)?;
    let (n, d) = (data.n(), data.x().cols());
    let df2 = (n - c.cols()) as f64;
    let rss1 = rss(data.y(), &c);
    let rss0 = rss(data.y(), data.z());
    let num = (rss0 - rss1).max(0.0) / d as f64;
    let (statistic, p_value) = if rss1 > 0.0 {
        let f = num / (rss1 / df2);
        (f, f_sf(f, d as f64, df2))
    } else if num > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(ClassicalReport {
        test: "F-test".into(),
        statistic,
        df1: d as f64,
        df2: Some(df2),
        p_value,
    })
}

/// Koenker's studentized Breusch-Pagan statistic `n R^2` from regressing
/// the squared OLS residuals of `y ~ x + z` on an intercept, `x` and `z`,
/// referred to chi-square with one degree of freedom per non-intercept
/// auxiliary column.
pub fn breusch_pagan_koenker(data: &Dataset) -> Result<ClassicalReport, BaselineError> {
    let c = full_design(data)?;
    let n = data.n();
    let e = QrFactor::pivoted(&c).residuals(data.y());
    let u: Vec<f64> = e.iter().map(|v| v * v).collect();

    let aux = Matrix::hstack(&[&Matrix::ones(n), &c]);
    let qr = QrFactor::pivoted(&aux);
    let df = (qr.rank() - 1) as f64;
    let resid = qr.residuals(&u);
    let mean = u.iter().sum::<f64>() / n as f64;
    let tss: f64 = u.iter().map(|v| (v - mean) * (v - mean)).sum();
    // squared residuals of equal magnitude vary only by rounding
    let r2 = if tss > 1e-20 * dot(&u, &u) {
        (1.0 - dot(&resid, &resid) / tss).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let statistic = n as f64 * r2;
    Ok(ClassicalReport {
        test: "Breusch-Pagan".into(),
        statistic,
        df1: df,
        df2: None,
        p_value: chi_square_sf(statistic, df),
    })
}
