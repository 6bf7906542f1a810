//! Graphical lasso: L1-penalized Gaussian maximum likelihood for the
//! precision matrix.
//!
//! The solver runs block coordinate descent directly on the precision
//! matrix Θ, one row/column block at a time in cyclic order. For column `j`
//! with the rest of Θ held fixed, the objective
//!
//! ```text
//! −log det Θ + tr(SΘ) + λ Σ_{i≠j} |Θ_ij|
//! ```
//!
//! reduces, after minimizing out the diagonal entry, to the lasso problem
//!
//! ```text
//! min_β  ½ βᵀ (s_jj · Θ₁₁⁻¹) β + s₁₂ᵀ β + λ ‖β‖₁
//! ```
//!
//! where β is the off-diagonal part of column `j`. The diagonal is then
//! `θ_jj = 1/s_jj + βᵀ Θ₁₁⁻¹ β`, which keeps the Schur complement at
//! `1/s_jj > 0`: every iterate is positive definite and every block update
//! lowers the objective. `W = Θ⁻¹` is carried along with rank-one updates
//! and refreshed from a fresh Cholesky inverse after each sweep.
//!
//! The diagonal of Θ is not penalized.

use ndarray::{Array1, Array2};

use super::cv::{contiguous_folds, gaussian_log_likelihood, select_best, LAMBDA_GRID_POINTS};
use super::{jittered_if_needed, result_from_precision, FilterMethod, FilterResult};
use crate::error::{Error, Result};
use crate::matrix::{invert_spd, log_det_spd, CorrelationMatrix, TimeSeriesPanel};

/// Precision entries smaller than this in magnitude are set to zero.
pub const ZERO_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoOptions {
    /// Converged when no precision entry moves more than this over a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Coordinate-descent passes allowed per column lasso.
    pub max_inner: usize,
    pub inner_tol: f64,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_sweeps: 500,
            max_inner: 1000,
            inner_tol: 1e-12,
        }
    }
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone, Default)]
pub struct GlassoTrace {
    /// Objective after each full sweep; `objectives[0]` is the starting point.
    pub objectives: Vec<f64>,
    pub sweeps: usize,
    pub duality_gap: f64,
}

/// `−log det Θ + tr(SΘ) + λ Σ_{i≠j} |Θ_ij|`, or `+∞` when Θ is not positive
/// definite.
pub fn glasso_objective(sample: &Array2<f64>, precision: &Array2<f64>, lambda: f64) -> f64 {
    match log_det_spd(precision) {
        Ok(ld) => -ld + (sample * precision).sum() + lambda * off_diagonal_l1(precision),
        Err(_) => f64::INFINITY,
    }
}

fn off_diagonal_l1(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += m[[i, j]].abs();
            }
        }
    }
    total
}

fn duality_gap(sample: &Array2<f64>, precision: &Array2<f64>, lambda: f64) -> f64 {
    (sample * precision).sum() - precision.nrows() as f64 + lambda * off_diagonal_l1(precision)
}

/// Graphical lasso with default options.
pub fn glasso(corr: &CorrelationMatrix, lambda: f64) -> Result<FilterResult> {
    glasso_with_options(corr, lambda, &GlassoOptions::default()).map(|(r, _)| r)
}

pub fn glasso_with_options(
    corr: &CorrelationMatrix,
    lambda: f64,
    options: &GlassoOptions,
) -> Result<(FilterResult, GlassoTrace)> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let (sample, jitter) = jittered_if_needed(corr.entries())?;
    let (mut theta, trace) = solve(&sample, lambda, options)?;
    theta.mapv_inplace(|v| if v.abs() < ZERO_TOLERANCE { 0.0 } else { v });
    let result = result_from_precision(FilterMethod::Glasso, theta, None, jitter)?;
    Ok((result, trace))
}

/// Runs the block coordinate descent on a sample matrix with positive
/// diagonal. Returns the (unthresholded) precision and the trace.
pub(crate) fn solve(sample: &Array2<f64>, lambda: f64, options: &GlassoOptions) -> Result<(Array2<f64>, GlassoTrace)> {
    let p = sample.nrows();
    if sample.diag().iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Data("sample matrix needs a positive diagonal".into()));
    }
    let mut theta = Array2::from_diag(&sample.diag().mapv(|d| 1.0 / d));
    let mut w = Array2::from_diag(&sample.diag().to_owned());
    let mut trace = GlassoTrace {
        objectives: vec![glasso_objective(sample, &theta, lambda)],
        ..Default::default()
    };

    if p == 1 {
        trace.duality_gap = duality_gap(sample, &theta, lambda);
        return Ok((theta, trace));
    }

    let mut others: Vec<Vec<usize>> = Vec::with_capacity(p);
    for j in 0..p {
        others.push((0..p).filter(|&k| k != j).collect());
    }

    for sweep in 1..=options.max_sweeps {
        let previous = theta.clone();
        for (j, rest) in others.iter().enumerate() {
            update_column(sample, lambda, options, &mut theta, &mut w, j, rest);
        }
        // refresh W to stop rank-one update drift
        w = invert_spd(&theta)?;
        trace.objectives.push(glasso_objective(sample, &theta, lambda));
        trace.sweeps = sweep;
        let change = (&theta - &previous).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if change < options.tol {
            trace.duality_gap = duality_gap(sample, &theta, lambda);
            return Ok((theta, trace));
        }
    }
    Err(Error::Convergence {
        sweeps: options.max_sweeps,
        gap: duality_gap(sample, &theta, lambda),
    })
}

fn update_column(
    sample: &Array2<f64>,
    lambda: f64,
    options: &GlassoOptions,
    theta: &mut Array2<f64>,
    w: &mut Array2<f64>,
    j: usize,
    rest: &[usize],
) {
    let m = rest.len();
    let s22 = sample[[j, j]];
    let w22 = w[[j, j]];
    let w12: Array1<f64> = rest.iter().map(|&k| w[[k, j]]).collect();
    let s12: Array1<f64> = rest.iter().map(|&k| sample[[k, j]]).collect();

    // A = Θ₁₁⁻¹ = W₁₁ − w₁₂ w₁₂ᵀ / w₂₂
    let mut a = Array2::<f64>::zeros((m, m));
    for (r, &kr) in rest.iter().enumerate() {
        for (c, &kc) in rest.iter().enumerate() {
            a[[r, c]] = w[[kr, kc]] - w12[r] * w12[c] / w22;
        }
    }

    // lasso on Q = s22·A, warm-started from the current column
    let mut beta: Array1<f64> = rest.iter().map(|&k| theta[[k, j]]).collect();
    let mut q_beta: Array1<f64> = a.dot(&beta) * s22;
    for _ in 0..options.max_inner {
        let mut max_step = 0.0_f64;
        for k in 0..m {
            let qkk = s22 * a[[k, k]];
            let r = s12[k] + q_beta[k] - qkk * beta[k];
            let new = -soft_threshold(r, lambda) / qkk;
            let delta = new - beta[k];
            if delta != 0.0 {
                for l in 0..m {
                    q_beta[l] += s22 * a[[l, k]] * delta;
                }
                beta[k] = new;
                max_step = max_step.max(delta.abs());
            }
        }
        if max_step < options.inner_tol {
            break;
        }
    }

    let u = a.dot(&beta);
    let theta22 = 1.0 / s22 + beta.dot(&u);
    for (r, &kr) in rest.iter().enumerate() {
        theta[[kr, j]] = beta[r];
        theta[[j, kr]] = beta[r];
        w[[kr, j]] = -s22 * u[r];
        w[[j, kr]] = -s22 * u[r];
        for (c, &kc) in rest.iter().enumerate() {
            w[[kr, kc]] = a[[r, c]] + s22 * u[r] * u[c];
        }
    }
    theta[[j, j]] = theta22;
    w[[j, j]] = s22;
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Twenty log-spaced penalties from 1e-3 to 1, ascending.
pub fn lambda_grid() -> Vec<f64> {
    let (lo, hi) = (1e-3_f64.ln(), 1.0_f64.ln());
    let last = (LAMBDA_GRID_POINTS - 1) as f64;
    (0..LAMBDA_GRID_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / last).exp())
        .collect()
}

/// Picks λ from [`lambda_grid`] with the best mean held-out log-likelihood
/// over `folds` contiguous time blocks.
pub fn select_lambda_cv(panel: &TimeSeriesPanel, folds: usize) -> Result<f64> {
    let folds = contiguous_folds(panel, folds)?;
    let grid = lambda_grid();
    let best = select_best(&folds, grid.len(), |fold, c| {
        let result = glasso(&fold.train_corr, grid[c]).ok()?;
        gaussian_log_likelihood(result.precision.entries(), &fold.test_cov).ok()
    })?;
    Ok(grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn identity_at_zero_penalty() {
        let r = glasso(&CorrelationMatrix::identity(4), 0.0).unwrap();
        assert_abs_diff_eq!(r.precision.entries(), &Array2::<f64>::eye(4), epsilon = 1e-12);
    }

    #[test]
    fn screening_bound_gives_diagonal() {
        let c =
            CorrelationMatrix::try_from_matrix(array![[1.0, 0.3, -0.2], [0.3, 1.0, 0.1], [-0.2, 0.1, 1.0]]).unwrap();
        let r = glasso(&c, 0.3).unwrap();
        assert_eq!(r.sparsity, 1.0);
        let r = glasso(&c, 0.25).unwrap();
        assert!(r.sparsity < 1.0);
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(matches!(
            glasso(&CorrelationMatrix::identity(2), -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn sweep_budget_exhaustion_reports_gap() {
        let c =
            CorrelationMatrix::try_from_matrix(array![[1.0, 0.9, 0.8], [0.9, 1.0, 0.85], [0.8, 0.85, 1.0]]).unwrap();
        let opts = GlassoOptions {
            max_sweeps: 1,
            ..Default::default()
        };
        match glasso_with_options(&c, 0.01, &opts) {
            Err(Error::Convergence { sweeps: 1, gap }) => assert!(gap.is_finite()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_endpoints() {
        let g = lambda_grid();
        assert_eq!(g.len(), 20);
        assert_abs_diff_eq!(g[0], 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(g[19], 1.0, epsilon = 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
