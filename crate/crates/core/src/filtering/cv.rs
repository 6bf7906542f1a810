//! Contiguous time-block cross-validation scored by held-out Gaussian
//! log-likelihood.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::matrix::{correlation_of, log_det_spd, CorrelationMatrix, TimeSeriesPanel};

/// The shrinkage grid is `{0, 1/STEPS, ..., 1}`.
pub const ALPHA_GRID_STEPS: usize = 20;
/// Number of log-spaced penalties in the graphical lasso grid.
pub const LAMBDA_GRID_POINTS: usize = 20;

/// Training correlation and held-out sample covariance (both on the scale of
/// the training standardization) for one fold.
pub(crate) struct Fold {
    pub train_corr: CorrelationMatrix,
    pub test_cov: Array2<f64>,
}

/// Splits the panel into `k` contiguous blocks; fold `i` holds out block `i`
/// and trains on the rest. Blocks are never shuffled.
pub(crate) fn contiguous_folds(panel: &TimeSeriesPanel, k: usize) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Parameter(format!(
            "cross-validation needs at least 2 folds, got {k}"
        )));
    }
    let t = panel.n_steps();
    let block = t / k;
    if block < 2 || t - block < 2 {
        return Err(Error::Data(format!(
            "{t} time steps are too few for {k} folds (each fold needs at least 2 rows)"
        )));
    }
    let data = panel.values();
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let start = i * block;
        let end = if i + 1 == k { t } else { start + block };
        let train_rows: Vec<usize> = (0..start).chain(end..t).collect();
        let train = data.select(Axis(0), &train_rows);
        let test = data.slice(ndarray::s![start..end, ..]);
        folds.push(score_pair(train.view(), test));
    }
    Ok(folds)
}

fn score_pair(train: ArrayView2<'_, f64>, test: ArrayView2<'_, f64>) -> Fold {
    let n = train.nrows() as f64;
    let mean = train.sum_axis(Axis(0)) / n;
    let centered = &train - &mean;
    let std: Array1<f64> = centered
        .map_axis(Axis(0), |c| (c.dot(&c) / n).sqrt())
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let z = (&test - &mean) / &std;
    let test_cov = z.t().dot(&z) / test.nrows() as f64;
    Fold {
        train_corr: correlation_of(train),
        test_cov,
    }
}

/// Average Gaussian log-likelihood per observation of data with sample
/// covariance `sample_cov` under a zero-mean model with the given precision.
pub fn gaussian_log_likelihood(precision: &Array2<f64>, sample_cov: &Array2<f64>) -> Result<f64> {
    let p = precision.nrows() as f64;
    let log_det = log_det_spd(precision)?;
    let trace: f64 = (sample_cov * precision).sum();
    Ok(0.5 * (log_det - trace - p * (2.0 * std::f64::consts::PI).ln()))
}

/// Index of the candidate with the highest mean fold score. A candidate whose
/// model cannot be fit on some fold scores minus infinity there; ties keep
/// the earliest candidate.
pub(crate) fn select_best<F>(folds: &[Fold], n_candidates: usize, mut score: F) -> Result<usize>
where
    F: FnMut(&Fold, usize) -> Option<f64>,
{
    let mut best: Option<(usize, f64)> = None;
    for c in 0..n_candidates {
        let mut total = 0.0;
        for fold in folds {
            total += score(fold, c).unwrap_or(f64::NEG_INFINITY);
        }
        let mean = total / folds.len() as f64;
        if mean.is_finite() && best.is_none_or(|(_, b)| mean > b) {
            best = Some((c, mean));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::Data("no candidate produced a finite held-out likelihood".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_count_is_checked() {
        let p = TimeSeriesPanel::from_values(Array2::from_shape_fn((10, 3), |(i, j)| (i * j) as f64 + (i % 3) as f64))
            .unwrap();
        assert!(matches!(contiguous_folds(&p, 1), Err(Error::Parameter(_))));
        assert!(matches!(contiguous_folds(&p, 10), Err(Error::Data(_))));
        assert_eq!(contiguous_folds(&p, 5).unwrap().len(), 5);
    }

    #[test]
    fn identity_likelihood_matches_formula() {
        let s = Array2::eye(3);
        let ll = gaussian_log_likelihood(&Array2::eye(3), &s).unwrap();
        let expected = -0.5 * (3.0 + 3.0 * (2.0 * std::f64::consts::PI).ln());
        assert!((ll - expected).abs() < 1e-12);
    }
}
