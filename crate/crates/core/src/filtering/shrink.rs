//! Linear shrinkage toward a scaled identity.

use ndarray::Array2;

use super::cv::{contiguous_folds, gaussian_log_likelihood, select_best, ALPHA_GRID_STEPS};
use super::{invert_with_jitter, FilterMethod, FilterResult};
use crate::error::{Error, Result};
use crate::matrix::{invert_spd, CorrelationMatrix, PrecisionMatrix, TimeSeriesPanel};

/// `(1 − α)·C + α·(tr C / n)·I`.
pub fn shrunk_correlation(corr: &CorrelationMatrix, alpha: f64) -> Result<CorrelationMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "shrinkage alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let c = corr.entries();
    let n = corr.n();
    let mu = c.diag().sum() / n as f64;
    let shrunk = c * (1.0 - alpha) + &(Array2::<f64>::eye(n) * (alpha * mu));
    CorrelationMatrix::try_from_matrix(shrunk)
}

/// Shrinks the correlation and inverts it. The precision is dense unless
/// `alpha` is 1.
pub fn shrink(corr: &CorrelationMatrix, alpha: f64) -> Result<FilterResult> {
    let correlation = shrunk_correlation(corr, alpha)?;
    let (precision, jitter) = invert_with_jitter(correlation.entries())?;
    let precision = PrecisionMatrix::new(precision)?;
    Ok(FilterResult {
        method: FilterMethod::Shrinkage,
        sparsity: precision.sparsity(),
        correlation,
        precision,
        forest: None,
        jitter,
    })
}

/// `{0, 0.05, ..., 1}`.
pub fn alpha_grid() -> Vec<f64> {
    (0..=ALPHA_GRID_STEPS)
        .map(|i| i as f64 / ALPHA_GRID_STEPS as f64)
        .collect()
}

/// Picks the shrinkage coefficient from [`alpha_grid`] with the best mean
/// held-out log-likelihood over `folds` contiguous time blocks.
pub fn select_alpha_cv(panel: &TimeSeriesPanel, folds: usize) -> Result<f64> {
    let folds = contiguous_folds(panel, folds)?;
    let grid = alpha_grid();
    let best = select_best(&folds, grid.len(), |fold, c| {
        let sigma = shrunk_correlation(&fold.train_corr, grid[c]).ok()?;
        let precision = invert_spd(sigma.entries()).ok()?;
        gaussian_log_likelihood(&precision, &fold.test_cov).ok()
    })?;
    Ok(grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn rho(r: f64) -> CorrelationMatrix {
        CorrelationMatrix::try_from_matrix(array![[1.0, r], [r, 1.0]]).unwrap()
    }

    #[test]
    fn endpoints() {
        let c = rho(0.3);
        assert_eq!(shrunk_correlation(&c, 0.0).unwrap(), c);
        assert_eq!(shrunk_correlation(&c, 1.0).unwrap().entries(), &Array2::<f64>::eye(2));
        assert_eq!(shrink(&c, 1.0).unwrap().sparsity, 1.0);
    }

    #[test]
    fn half_shrink_of_point_eight() {
        let s = shrunk_correlation(&rho(0.8), 0.5).unwrap();
        assert_abs_diff_eq!(s.get(0, 1), 0.4, epsilon = 1e-15);
        assert_eq!(s.get(0, 0), 1.0);
    }

    #[test]
    fn alpha_out_of_range() {
        assert!(matches!(shrink(&rho(0.1), -0.01), Err(Error::Parameter(_))));
        assert!(matches!(shrink(&rho(0.1), 1.01), Err(Error::Parameter(_))));
    }

    #[test]
    fn grid_has_twenty_one_points() {
        let g = alpha_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 1.0);
        assert_abs_diff_eq!(g[1], 0.05);
    }
}
