//! Correlation filtering: covariance shrinkage, graphical lasso, and the
//! maximally filtered clique forest (TMFG when cliques are fixed at size
//! four), each producing a filtered correlation matrix paired with its
//! precision matrix.

mod cv;
pub mod glasso;
pub mod mfcf;
pub mod shrink;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{invert_spd, is_positive_definite, CorrelationMatrix, PrecisionMatrix};

pub use cv::{gaussian_log_likelihood, ALPHA_GRID_STEPS, LAMBDA_GRID_POINTS};
pub use glasso::{
    glasso, glasso_objective, glasso_with_options, lambda_grid, select_lambda_cv, GlassoOptions, GlassoTrace,
};
pub use mfcf::{is_chordal, mfcf, CliqueForest, Insertion};
pub use shrink::{alpha_grid, select_alpha_cv, shrink, shrunk_correlation};

/// Diagonal jitter added to a non-PD empirical correlation before inversion.
pub const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMethod {
    Empirical,
    Shrinkage,
    Glasso,
    Mfcf,
}

impl std::str::FromStr for FilterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "empirical" => Ok(Self::Empirical),
            "shrinkage" | "shrink" => Ok(Self::Shrinkage),
            "glasso" => Ok(Self::Glasso),
            "mfcf" | "tmfg" => Ok(Self::Mfcf),
            other => Err(Error::Parameter(format!("unknown filter method `{other}`"))),
        }
    }
}

impl std::fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Empirical => "Empirical",
            Self::Shrinkage => "Shrinkage",
            Self::Glasso => "GLASSO",
            Self::Mfcf => "MFCF",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub method: FilterMethod,
    /// Shrinkage coefficient in [0, 1].
    pub alpha: f64,
    /// L1 penalty on off-diagonal precision entries.
    pub lambda: f64,
    pub min_clique: usize,
    pub max_clique: usize,
    /// Squared correlations below this value contribute nothing to the
    /// clique-forest insertion gain.
    pub mfcf_gain_threshold: f64,
    pub cv_folds: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            method: FilterMethod::Glasso,
            alpha: 0.1,
            lambda: 0.1,
            min_clique: 4,
            max_clique: 4,
            mfcf_gain_threshold: 0.0,
            cv_folds: 5,
        }
    }
}

impl FilterConfig {
    pub fn with_method(method: FilterMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    /// Checks the parameter ranges that do not depend on the series count.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Parameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.min_clique < 2 || self.max_clique < self.min_clique {
            return Err(Error::Parameter(format!(
                "clique sizes must satisfy 2 <= min <= max, got min {} max {}",
                self.min_clique, self.max_clique
            )));
        }
        if !self.mfcf_gain_threshold.is_finite() {
            return Err(Error::Parameter("mfcf gain threshold must be finite".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Parameter(format!(
                "cv folds must be >= 2, got {}",
                self.cv_folds
            )));
        }
        Ok(())
    }
}

/// Output of a filtering method.
#[derive(Debug, Clone)]
pub struct FilterResult {
    pub method: FilterMethod,
    /// Filtered dense correlation.
    pub correlation: CorrelationMatrix,
    pub precision: PrecisionMatrix,
    /// Fraction of zero off-diagonal precision entries.
    pub sparsity: f64,
    pub forest: Option<CliqueForest>,
    /// Diagonal jitter that had to be added before inversion (0 when none).
    pub jitter: f64,
}

/// Fraction of zero off-diagonal entries of a precision matrix.
pub fn sparsity(precision: &PrecisionMatrix) -> f64 {
    precision.sparsity()
}

/// Unfiltered baseline: the empirical correlation and its direct inverse.
pub fn empirical(corr: &CorrelationMatrix) -> Result<FilterResult> {
    let (precision, jitter) = invert_with_jitter(corr.entries())?;
    let precision = PrecisionMatrix::new(precision)?;
    Ok(FilterResult {
        method: FilterMethod::Empirical,
        sparsity: precision.sparsity(),
        correlation: corr.clone(),
        precision,
        forest: None,
        jitter,
    })
}

/// Runs the configured method on `corr`.
pub fn apply_filter(corr: &CorrelationMatrix, config: &FilterConfig) -> Result<FilterResult> {
    config.validate()?;
    match config.method {
        FilterMethod::Empirical => empirical(corr),
        FilterMethod::Shrinkage => shrink(corr, config.alpha),
        FilterMethod::Glasso => glasso(corr, config.lambda),
        FilterMethod::Mfcf => mfcf(corr, config),
    }
}

/// Inverts `m`, retrying once with [`JITTER`] on the diagonal when `m` is not
/// numerically positive definite. Returns the inverse and the jitter used.
pub(crate) fn invert_with_jitter(m: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    match invert_spd(m) {
        Ok(inv) => Ok((inv, 0.0)),
        Err(Error::Definiteness { .. }) => {
            let jittered = m + &(Array2::<f64>::eye(m.nrows()) * JITTER);
            Ok((invert_spd(&jittered)?, JITTER))
        }
        Err(e) => Err(e),
    }
}

/// `m` itself when positive definite, otherwise `m + JITTER·I`.
pub(crate) fn jittered_if_needed(m: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    if is_positive_definite(m)? {
        Ok((m.clone(), 0.0))
    } else {
        Ok((m + &(Array2::<f64>::eye(m.nrows()) * JITTER), JITTER))
    }
}

/// Builds the result for methods that produce a precision matrix first: the
/// filtered correlation is its inverse.
pub(crate) fn result_from_precision(
    method: FilterMethod,
    precision: Array2<f64>,
    forest: Option<CliqueForest>,
    jitter: f64,
) -> Result<FilterResult> {
    let precision = PrecisionMatrix::new(precision)?;
    let correlation = CorrelationMatrix::try_from_matrix(invert_spd(precision.entries())?)?;
    Ok(FilterResult {
        method,
        sparsity: precision.sparsity(),
        correlation,
        precision,
        forest,
        jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        let bad = FilterConfig {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
        let bad = FilterConfig {
            min_clique: 5,
            max_clique: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FilterConfig {
            lambda: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("GLASSO".parse::<FilterMethod>().unwrap(), FilterMethod::Glasso);
        assert_eq!("tmfg".parse::<FilterMethod>().unwrap(), FilterMethod::Mfcf);
        assert!("pmfg".parse::<FilterMethod>().is_err());
    }

    #[test]
    fn empirical_inverts_directly() {
        let c = CorrelationMatrix::try_from_matrix(array![[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let r = empirical(&c).unwrap();
        assert_eq!(r.sparsity, 0.0);
        assert_eq!(r.jitter, 0.0);
        assert!((r.precision.entries()[[0, 1]] + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_empirical_gets_jitter() {
        let c = CorrelationMatrix::try_from_matrix(array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let r = empirical(&c).unwrap();
        assert_eq!(r.jitter, JITTER);
    }
}
