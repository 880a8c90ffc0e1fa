//! Confidence sets for a scalar coefficient by inverting the permutation
//! test over a grid of hypothesised values.

use serde::{Deserialize, Serialize};

use super::{palmrt_test, Dataset, Evaluator, FrameworkError, ModelFitter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub beta: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub alpha: f64,
    pub grid: Vec<GridPoint>,
    /// The accepted grid values form one run of consecutive grid points.
    pub contiguous: bool,
    pub seed: u64,
    pub b: usize,
}

/// For every `beta0` in `grid`, tests `y - x * beta0` with the same seed and
/// keeps the values whose p-value exceeds `alpha`. The interval spans the
/// smallest and largest kept value; `contiguous` reports whether the kept
/// values have gaps.
#[allow(clippy::too_many_arguments)]
pub fn invert_ci(
    data: &Dataset,
    fitter: &dyn ModelFitter,
    eval: &dyn Evaluator,
    b: usize,
    seed: u64,
    alpha: f64,
    grid: &[f64],
) -> Result<ConfidenceInterval, FrameworkError> {
    if data.x().cols() != 1 {
        return Err(FrameworkError::InvalidArgument(format!(
            "interval inversion needs a single covariate of interest, got {}",
            data.x().cols()
        )));
    }
    if grid.is_empty()
        || !grid.iter().all(|g| g.is_finite())
        || grid.windows(2).any(|w| w[0] > w[1])
    {
        return Err(FrameworkError::InvalidArgument(
            "grid must be nonempty, finite and sorted".into(),
        ));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(FrameworkError::InvalidArgument(format!(
            "alpha must be in [0, 1), got {alpha}"
        )));
    }

    let x = data.x().column(0);
    let mut points = Vec::with_capacity(grid.len());
    for &beta in grid {
        let y: Vec<f64> = data.y().iter().zip(x).map(|(y, x)| y - x * beta).collect();
        let report = palmrt_test(&data.with_response(y)?, fitter, eval, b, seed)?;
        points.push(GridPoint {
            beta,
            p_value: report.p_value,
        });
    }

    let accepted: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].p_value > alpha)
        .collect();
    let (Some(&first), Some(&last)) = (accepted.first(), accepted.last()) else {
        let max_p = points.iter().map(|p| p.p_value).fold(0.0, f64::max);
        return Err(FrameworkError::EmptyAcceptance { alpha, max_p });
    };
    Ok(ConfidenceInterval {
        beta_lo: points[first].beta,
        beta_hi: points[last].beta,
        alpha,
        contiguous: last - first + 1 == accepted.len(),
        grid: points,
        seed,
        b,
    })
}
