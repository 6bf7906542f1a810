//! Runs one configuration per value along a sweep axis and tabulates the
//! reports.

use serde::{Deserialize, Serialize};

use super::data::SalesDataset;
use super::experiment::{run_experiment, ExperimentConfig, MetricsReport, RunRecord};
use super::report::{aligned_table, format_sparsity, metric_cells};
use crate::error::{Error, Result};
use crate::filtering::FilterMethod;
use crate::graph::GraphKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    FilterMethod,
    /// Varies the sparsity-controlling parameter of the configured filter:
    /// α for shrinkage, λ for glasso, the gain threshold for MFCF.
    Sparsity,
    GraphKind,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "filter-method" | "filter" | "method" => Ok(Self::FilterMethod),
            "sparsity" => Ok(Self::Sparsity),
            "graph-kind" | "graph" => Ok(Self::GraphKind),
            other => Err(Error::Parameter(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FilterMethod => "filter-method",
            Self::Sparsity => "sparsity",
            Self::GraphKind => "graph-kind",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub outcome: std::result::Result<MetricsReport, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

/// Configuration for each sweep value. Values are validated up front so a
/// typo fails before any training.
pub fn sweep_configs(base: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<ExperimentConfig>> {
    if values.is_empty() {
        return Err(Error::Parameter("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|v| {
            let mut config = base.clone();
            match axis {
                SweepAxis::FilterMethod => config.filter.method = v.parse()?,
                SweepAxis::GraphKind => config.graph_kind = v.parse::<GraphKind>()?,
                SweepAxis::Sparsity => {
                    let x: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Parameter(format!("sparsity sweep value `{v}` is not a number")))?;
                    match config.filter.method {
                        FilterMethod::Shrinkage => config.filter.alpha = x,
                        FilterMethod::Glasso => config.filter.lambda = x,
                        FilterMethod::Mfcf => config.filter.mfcf_gain_threshold = x,
                        FilterMethod::Empirical => {
                            return Err(Error::Parameter(
                                "the empirical filter has no sparsity parameter".into(),
                            ))
                        }
                    }
                    config.select_filter_params = false;
                }
            }
            config.validate()?;
            Ok(config)
        })
        .collect()
}

/// Runs every value; failed runs become failed rows. Sparsity sweeps are
/// ordered by realized sparsity, densest last.
pub fn sweep(
    dataset: &SalesDataset,
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    jobs: usize,
) -> Result<SweepTable> {
    let configs = sweep_configs(base, axis, values)?;
    let mut rows: Vec<SweepRow> = values
        .iter()
        .zip(&configs)
        .map(|(v, c)| SweepRow {
            value: v.clone(),
            outcome: run_experiment(dataset, c, jobs).map_err(|e| e.to_string()),
        })
        .collect();
    if axis == SweepAxis::Sparsity {
        // stable: failed rows keep their relative order at the end
        rows.sort_by(|a, b| {
            let key = |r: &SweepRow| r.outcome.as_ref().ok().and_then(|rep| rep.sparsity);
            match (key(a), key(b)) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            }
        });
    }
    Ok(SweepTable { axis, rows })
}

impl SweepTable {
    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .flat_map(|rep| rep.runs.iter())
    }

    pub fn failed_count(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Human-readable table: sweep value, realized sparsity and the three
    /// metrics as mean ± std over seeds.
    pub fn format(&self) -> String {
        let value_header = match self.axis {
            SweepAxis::FilterMethod => "Filter",
            SweepAxis::Sparsity => "Parameter",
            SweepAxis::GraphKind => "Graph",
        };
        let mut rows = vec![vec![
            value_header.to_string(),
            "Sparsity".into(),
            "RMSE".into(),
            "MAE".into(),
            "MAPE".into(),
        ]];
        for row in &self.rows {
            match &row.outcome {
                Ok(rep) => {
                    let [rmse, mae, mape] = metric_cells(rep);
                    rows.push(vec![row.value.clone(), format_sparsity(rep.sparsity), rmse, mae, mape]);
                }
                Err(e) => rows.push(vec![
                    row.value.clone(),
                    "-".into(),
                    format!("FAILED: {e}"),
                    String::new(),
                    String::new(),
                ]),
            }
        }
        aligned_table(&rows)
    }
}
