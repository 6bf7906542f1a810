//! Four-moment node features.

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::matrix::TimeSeriesPanel;

/// Feature columns per node.
pub const FEATURE_DIM: usize = 4;

/// Mean, sample standard deviation, skewness and excess kurtosis of every
/// series over `window`, one row per series.
///
/// Skewness and kurtosis use population central moments (`m3 / m2^1.5` and
/// `m4 / m2² − 3`). A constant window gives `(mean, 0, 0, 0)`.
pub fn node_features(panel: &TimeSeriesPanel, window: Range<usize>) -> Result<Array2<f64>> {
    if window.len() < 2 {
        return Err(Error::Range(format!("feature window {window:?} is shorter than 2")));
    }
    moments(panel.window(window)?)
}

/// [`node_features`] on a `T × N` block whose columns are the series.
pub fn moments(block: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if block.nrows() < 2 {
        return Err(Error::Range(format!(
            "feature window of length {} is shorter than 2",
            block.nrows()
        )));
    }
    let mut out = Array2::zeros((block.ncols(), FEATURE_DIM));
    for (i, column) in block.columns().into_iter().enumerate() {
        let [a, b, c, d] = series_moments(column);
        out[[i, 0]] = a;
        out[[i, 1]] = b;
        out[[i, 2]] = c;
        out[[i, 3]] = d;
    }
    Ok(out)
}

fn series_moments(x: ArrayView1<'_, f64>) -> [f64; 4] {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    // relative test so rounding noise in a constant window reads as constant
    if m2 <= 1e-24 * (1.0 + mean * mean) * n {
        return [mean, 0.0, 0.0, 0.0];
    }
    let std = (m2 / (n - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    [mean, std, m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0]
}
