//! Forecast error metrics and their aggregation over seeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Percentage, over points with nonzero truth.
    pub mape: f64,
    /// Points left out of the MAPE because their truth is zero.
    pub mape_excluded: usize,
}

/// RMSE, MAE and MAPE (in percent) of `predictions` against `truth`.
///
/// Zero-truth points are left out of the MAPE and counted; when every truth
/// value is zero the MAPE is reported as 0.
pub fn compute_metrics(predictions: &[f64], truth: &[f64]) -> Result<Metrics> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "metrics need equal nonempty inputs, got {} predictions and {} truths",
            predictions.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let (mut sq, mut abs, mut pct) = (0.0, 0.0, 0.0);
    let mut excluded = 0;
    for (&p, &t) in predictions.iter().zip(truth) {
        let e = p - t;
        sq += e * e;
        abs += e.abs();
        if t == 0.0 {
            excluded += 1;
        } else {
            pct += (e / t).abs();
        }
    }
    let counted = truth.len() - excluded;
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        mape: if counted == 0 {
            0.0
        } else {
            100.0 * pct / counted as f64
        },
        mape_excluded: excluded,
    })
}

/// Mean and sample standard deviation (divisor k − 1; 0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        };
        Self { mean, std }
    }

    /// `mean ± std` with the given number of decimals.
    pub fn display(&self, decimals: usize) -> String {
        format!("{:.*} ± {:.*}", decimals, self.mean, decimals, self.std)
    }
}
