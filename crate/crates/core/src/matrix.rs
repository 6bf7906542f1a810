//! Dense symmetric linear algebra: the time-series panel, correlation and
//! precision matrix types, Pearson correlation, and Cholesky-based SPD
//! inversion.
//!
//! Everything here is dense. Sparsity of a precision matrix is tracked as
//! metadata (the list of nonzero off-diagonal pairs), not as a storage format.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;

use chrono::{Duration, NaiveDate};
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Smallest Cholesky pivot accepted as positive.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// A T×N panel of observations: rows are time steps, columns are series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: Array2<f64>,
    series_ids: Vec<String>,
    timestamps: Vec<NaiveDate>,
}

impl TimeSeriesPanel {
    pub fn new(values: Array2<f64>, series_ids: Vec<String>, timestamps: Vec<NaiveDate>) -> Result<Self> {
        let (t, n) = values.dim();
        if t < 2 || n < 2 {
            return Err(Error::Shape(format!("panel must be at least 2x2, got {t}x{n}")));
        }
        if series_ids.len() != n {
            return Err(Error::Shape(format!("{} series ids for {n} columns", series_ids.len())));
        }
        if timestamps.len() != t {
            return Err(Error::Shape(format!("{} timestamps for {t} rows", timestamps.len())));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("panel timestamps must be strictly increasing".into()));
        }
        if let Some(((row, col), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value {v} at row {row}, column {col}")));
        }
        Ok(Self {
            values,
            series_ids,
            timestamps,
        })
    }

    /// Panel with generated ids (`s0`, `s1`, ...) and consecutive daily
    /// timestamps starting 2000-01-01.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (t, n) = values.dim();
        let ids = (0..n).map(|j| format!("s{j}")).collect();
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let stamps = (0..t).map(|i| start + Duration::days(i as i64)).collect();
        Self::new(values, ids, stamps)
    }

    pub fn n_steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    /// Rows `window` of the panel, with bounds checked.
    pub fn window(&self, window: Range<usize>) -> Result<ArrayView2<'_, f64>> {
        if window.start >= window.end || window.end > self.n_steps() {
            return Err(Error::Range(format!(
                "window {}..{} outside panel of {} steps",
                window.start,
                window.end,
                self.n_steps()
            )));
        }
        Ok(self.values.slice(ndarray::s![window, ..]))
    }

    /// Sub-panel restricted to the given rows.
    pub fn slice_rows(&self, rows: Range<usize>) -> Result<Self> {
        let view = self.window(rows.clone())?;
        Self::new(view.to_owned(), self.series_ids.clone(), self.timestamps[rows].to_vec())
    }

    /// First differences, one row shorter. Each row is stamped with the later
    /// of the two time points it was computed from.
    pub fn differenced(&self) -> Result<Self> {
        let v = &self.values;
        let diff = &v.slice(ndarray::s![1.., ..]) - &v.slice(ndarray::s![..-1, ..]);
        Self::new(diff, self.series_ids.clone(), self.timestamps[1..].to_vec())
    }
}

/// Symmetric matrix with unit diagonal and entries in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    entries: Array2<f64>,
}

impl CorrelationMatrix {
    /// Validates and normalizes a candidate correlation matrix.
    ///
    /// The input is symmetrized; diagonal entries within 1e-6 of one are set
    /// to exactly one, and off-diagonals within 1e-6 of the unit interval are
    /// clamped into it. Anything further out is rejected.
    pub fn try_from_matrix(m: Array2<f64>) -> Result<Self> {
        check_square(&m)?;
        let mut m = symmetrize(&m);
        let n = m.nrows();
        for i in 0..n {
            for j in 0..n {
                let v = m[[i, j]];
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite correlation entry at ({i}, {j})")));
                }
                if i == j {
                    if (v - 1.0).abs() > 1e-6 {
                        return Err(Error::Data(format!("correlation diagonal ({i}, {i}) is {v}")));
                    }
                    m[[i, i]] = 1.0;
                } else {
                    if v.abs() > 1.0 + 1e-6 {
                        return Err(Error::Data(format!(
                            "correlation entry ({i}, {j}) = {v} outside [-1, 1]"
                        )));
                    }
                    m[[i, j]] = v.clamp(-1.0, 1.0);
                }
            }
        }
        Ok(Self { entries: m })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: Array2::eye(n),
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }
}

/// Symmetric positive definite inverse correlation matrix together with its
/// off-diagonal sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    entries: Array2<f64>,
    pattern: Vec<(usize, usize)>,
}

impl PrecisionMatrix {
    /// Symmetrizes `m`, checks positive definiteness, and records every
    /// nonzero off-diagonal pair `(i, j)` with `i < j`.
    pub fn new(m: Array2<f64>) -> Result<Self> {
        check_square(&m)?;
        let m = symmetrize(&m);
        cholesky(&m)?;
        let n = m.nrows();
        let mut pattern = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if m[[i, j]] != 0.0 {
                    pattern.push((i, j));
                }
            }
        }
        Ok(Self { entries: m, pattern })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Nonzero off-diagonal pairs with `i < j`; the mirrored pair is implied.
    pub fn pattern(&self) -> &[(usize, usize)] {
        &self.pattern
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.entries[[i, j]] != 0.0
    }

    /// Fraction of zero off-diagonal entries, over N·(N−1).
    pub fn sparsity(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 1.0;
        }
        let pairs = n * (n - 1) / 2;
        (pairs - self.pattern.len()) as f64 / pairs as f64
    }
}

/// Pearson correlation of the panel columns over `window`.
///
/// Zero-variance columns correlate 0 with every other column and 1 with
/// themselves.
pub fn compute_correlation(panel: &TimeSeriesPanel, window: Range<usize>) -> Result<CorrelationMatrix> {
    if window.end.saturating_sub(window.start) < 2 {
        return Err(Error::Range(format!(
            "correlation window {}..{} shorter than 2",
            window.start, window.end
        )));
    }
    let view = panel.window(window)?;
    Ok(correlation_of(view))
}

/// Pearson correlation of the columns of `data` (rows are observations).
pub fn correlation_of(data: ArrayView2<'_, f64>) -> CorrelationMatrix {
    let t = data.nrows() as f64;
    let n = data.ncols();
    let means = data.sum_axis(Axis(0)) / t;
    let centered = &data - &means;
    let cov = centered.t().dot(&centered);
    let scale: Vec<f64> = (0..n)
        .map(|j| {
            let var = cov[[j, j]];
            // relative test so that large constant levels still read as constant
            let level = means[j].abs().max(1.0);
            if var <= (1e-12 * level).powi(2) * t {
                0.0
            } else {
                1.0 / var.sqrt()
            }
        })
        .collect();
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        c[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let v = (cov[[i, j]] * scale[i] * scale[j]).clamp(-1.0, 1.0);
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    CorrelationMatrix { entries: c }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = m`.
///
/// Fails with [`Error::Definiteness`] at the first pivot not exceeding
/// [`PIVOT_TOLERANCE`].
pub fn cholesky(m: &Array2<f64>) -> Result<Array2<f64>> {
    check_square(m)?;
    let n = m.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > PIVOT_TOLERANCE) {
            return Err(Error::Definiteness { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn invert_spd(m: &Array2<f64>) -> Result<Array2<f64>> {
    check_symmetric(m)?;
    let l = cholesky(m)?;
    let n = l.nrows();
    // forward substitution for L⁻¹
    let mut linv = Array2::<f64>::zeros((n, n));
    for col in 0..n {
        linv[[col, col]] = 1.0 / l[[col, col]];
        for i in (col + 1)..n {
            let mut s = 0.0;
            for k in col..i {
                s -= l[[i, k]] * linv[[k, col]];
            }
            linv[[i, col]] = s / l[[i, i]];
        }
    }
    Ok(symmetrize(&linv.t().dot(&linv)))
}

/// Log-determinant of an SPD matrix from its Cholesky factor.
pub fn log_det_spd(m: &Array2<f64>) -> Result<f64> {
    let l = cholesky(m)?;
    Ok(2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>())
}

/// True iff the Cholesky factorization succeeds with all pivots above
/// [`PIVOT_TOLERANCE`].
pub fn is_positive_definite(m: &Array2<f64>) -> Result<bool> {
    check_symmetric(m)?;
    match cholesky(m) {
        Ok(_) => Ok(true),
        Err(Error::Definiteness { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Array2<f64>) -> Array2<f64> {
    (m + &m.t()) * 0.5
}

pub(crate) fn check_square(m: &Array2<f64>) -> Result<()> {
    let (r, c) = m.dim();
    if r != c || r == 0 {
        return Err(Error::Shape(format!("expected a nonempty square matrix, got {r}x{c}")));
    }
    Ok(())
}

pub(crate) fn check_symmetric(m: &Array2<f64>) -> Result<()> {
    check_square(m)?;
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-10 * scale {
                return Err(Error::Shape(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[[i, j]],
                    m[[j, i]]
                )));
            }
        }
    }
    Ok(())
}

/// Renders a square matrix in the fixture format: a line holding `N`, then
/// `N` rows of `N` whitespace-separated values. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn format_matrix(m: &Array2<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", m.nrows());
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn write_matrix<W: Write>(mut w: W, m: &Array2<f64>) -> Result<()> {
    w.write_all(format_matrix(m).as_bytes())?;
    Ok(())
}

/// Parses the fixture format written by [`format_matrix`].
pub fn read_matrix<R: BufRead>(r: R) -> Result<Array2<f64>> {
    let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (line_no, first) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty matrix file".into(),
    })?;
    let first = first?;
    let n: usize = first.trim().parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("expected matrix size, got `{}`", first.trim()),
    })?;
    let mut m = Array2::zeros((n, n));
    for row in 0..n {
        let (line_no, line) = lines.next().ok_or_else(|| Error::Parse {
            line: line_no + row + 1,
            message: format!("expected {n} rows, found {row}"),
        })?;
        let line = line?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != n {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {n} values, found {}", vals.len()),
            });
        }
        for (col, tok) in vals.iter().enumerate() {
            m[[row, col]] = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid number `{tok}`"),
            })?;
        }
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(Error::Parse {
            line: line_no,
            message: "trailing data after matrix".into(),
        });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn identical_and_negated_columns() {
        let x = [1.0, 3.0, 2.0, 5.0, 4.0];
        let mut v = Array2::zeros((5, 3));
        for (i, xi) in x.iter().enumerate() {
            v[[i, 0]] = *xi;
            v[[i, 1]] = *xi;
            v[[i, 2]] = -xi;
        }
        let p = TimeSeriesPanel::from_values(v).unwrap();
        let c = compute_correlation(&p, 0..5).unwrap();
        assert_abs_diff_eq!(c.get(0, 1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.get(0, 2), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_is_uncorrelated() {
        let v = array![[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]];
        let p = TimeSeriesPanel::from_values(v).unwrap();
        let c = compute_correlation(&p, 0..3).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(1, 1), 1.0);
    }

    #[test]
    fn window_bounds_are_checked() {
        let p = TimeSeriesPanel::from_values(Array2::zeros((4, 2))).unwrap();
        assert!(matches!(compute_correlation(&p, 2..6), Err(Error::Range(_))));
        assert!(matches!(compute_correlation(&p, 1..2), Err(Error::Range(_))));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(invert_spd(&Array2::eye(3)).unwrap(), Array2::<f64>::eye(3));
        let d = invert_spd(&array![[2.0, 0.0], [0.0, 4.0]]).unwrap();
        assert_abs_diff_eq!(d, array![[0.5, 0.0], [0.0, 0.25]], epsilon = 1e-15);
        let r = invert_spd(&array![[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let expected = array![[4.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, 4.0 / 3.0]];
        assert_abs_diff_eq!(r, expected, epsilon = 1e-12);
    }

    #[test]
    fn singular_input_names_failing_pivot() {
        match invert_spd(&array![[1.0, 1.0], [1.0, 1.0]]) {
            Err(Error::Definiteness { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn definiteness_examples() {
        assert!(is_positive_definite(&Array2::eye(4)).unwrap());
        assert!(!is_positive_definite(&array![[1.0, 1.0], [1.0, 1.0]]).unwrap());
        assert!(is_positive_definite(&array![[1.0, 0.99], [0.99, 1.0]]).unwrap());
        assert!(matches!(
            is_positive_definite(&array![[1.0, 0.2], [0.1, 1.0]]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            is_positive_definite(&Array2::zeros((2, 3))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn precision_sparsity() {
        assert_eq!(PrecisionMatrix::new(Array2::eye(4)).unwrap().sparsity(), 1.0);
        let dense = array![[2.0, 0.5, 0.5], [0.5, 2.0, 0.5], [0.5, 0.5, 2.0]];
        assert_eq!(PrecisionMatrix::new(dense).unwrap().sparsity(), 0.0);
    }

    #[test]
    fn fixture_round_trip_is_exact() {
        let m = array![[1.0, -0.123456789012345], [-0.123456789012345, 1.0 / 3.0]];
        let text = format_matrix(&m);
        assert!(text.starts_with("2\n"));
        let back = read_matrix(text.as_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn fixture_errors_carry_line_numbers() {
        let err = read_matrix("2\n1 0\n0 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = read_matrix("2\n1 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn differencing_shortens_panel() {
        let p = TimeSeriesPanel::from_values(array![[1.0, 2.0], [2.0, 4.0], [4.0, 8.0]]).unwrap();
        let d = p.differenced().unwrap();
        assert_eq!(d.values(), &array![[1.0, 2.0], [2.0, 4.0]]);
        assert_eq!(d.timestamps()[0], p.timestamps()[1]);
    }
}
