//! Graphs consumed by the spatial layers: filtered (inverse) correlation
//! graphs and the all-ones, all-zeros and identity benchmarks.
//!
//! Every graph keeps self-loops in its mask so attention always has at least
//! one neighbor per node. Negative weights are ordinary edges.

use std::fmt::Write as _;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::FilterResult;
use crate::matrix::format_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Correlation,
    InverseCorrelation,
    Ones,
    Zeros,
    Identity,
}

impl GraphKind {
    pub fn is_benchmark(self) -> bool {
        matches!(self, Self::Ones | Self::Zeros | Self::Identity)
    }

    /// Short label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::Correlation => "Cor",
            Self::InverseCorrelation => "Inv Cor",
            Self::Ones => "Ones",
            Self::Zeros => "Zeros",
            Self::Identity => "Identity",
        }
    }
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "correlation" | "cor" => Ok(Self::Correlation),
            "inverse-correlation" | "inv-cor" | "precision" => Ok(Self::InverseCorrelation),
            "ones" => Ok(Self::Ones),
            "zeros" => Ok(Self::Zeros),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Parameter(format!("unknown graph kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Correlation => "correlation",
            Self::InverseCorrelation => "inverse-correlation",
            Self::Ones => "ones",
            Self::Zeros => "zeros",
            Self::Identity => "identity",
        })
    }
}

/// Weighted graph over the series. `mask[i][j]` marks an edge; the diagonal
/// is always masked in.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredGraph {
    weights: Array2<f64>,
    mask: Array2<bool>,
    kind: GraphKind,
}

impl FilteredGraph {
    /// Validating constructor: weights and mask must be square, the same size
    /// and symmetric, the diagonal of the mask set, and unmasked off-diagonal
    /// weights zero.
    pub fn new(weights: Array2<f64>, mask: Array2<bool>, kind: GraphKind) -> Result<Self> {
        let (r, c) = weights.dim();
        if r != c || r == 0 || mask.dim() != (r, c) {
            return Err(Error::Shape(format!(
                "graph weights {r}x{c} and mask {:?} must be equal-size squares",
                mask.dim()
            )));
        }
        for i in 0..r {
            if !mask[[i, i]] {
                return Err(Error::Data(format!("graph mask diagonal ({i}, {i}) must be set")));
            }
            for j in 0..r {
                if weights[[i, j]] != weights[[j, i]] || mask[[i, j]] != mask[[j, i]] {
                    return Err(Error::Data(format!("graph is not symmetric at ({i}, {j})")));
                }
                if i != j && !mask[[i, j]] && weights[[i, j]] != 0.0 {
                    return Err(Error::Data(format!(
                        "unmasked edge ({i}, {j}) carries weight {}",
                        weights[[i, j]]
                    )));
                }
                if !weights[[i, j]].is_finite() {
                    return Err(Error::Data(format!("non-finite graph weight at ({i}, {j})")));
                }
            }
        }
        Ok(Self { weights, mask, kind })
    }

    /// Graph from a filtered matrix. Off-diagonal edges are exactly the
    /// nonzero entries; diagonal weights are kept as they are.
    pub fn from_filter_result(result: &FilterResult, kind: GraphKind) -> Result<Self> {
        let weights = match kind {
            GraphKind::Correlation => result.correlation.entries().clone(),
            GraphKind::InverseCorrelation => result.precision.entries().clone(),
            other => {
                return Err(Error::Parameter(format!(
                    "`{other}` graphs do not come from a filter; use benchmark_graph"
                )))
            }
        };
        Self::from_weights(weights, kind)
    }

    /// Mask derived from the nonzero pattern of `weights` (diagonal always in).
    pub fn from_weights(weights: Array2<f64>, kind: GraphKind) -> Result<Self> {
        let n = weights.nrows();
        let mask = Array2::from_shape_fn((n, n), |(i, j)| i == j || weights[[i, j]] != 0.0);
        Self::new(weights, mask, kind)
    }

    /// All-ones (fully connected), all-zeros (disconnected, self-loop mask
    /// only) or identity benchmark graph.
    pub fn benchmark(n: usize, kind: GraphKind) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("benchmark graph needs at least one node".into()));
        }
        let (weights, mask) = match kind {
            GraphKind::Ones => (Array2::ones((n, n)), Array2::from_elem((n, n), true)),
            GraphKind::Zeros => (Array2::zeros((n, n)), Array2::from_shape_fn((n, n), |(i, j)| i == j)),
            GraphKind::Identity => (Array2::eye(n), Array2::from_shape_fn((n, n), |(i, j)| i == j)),
            other => return Err(Error::Parameter(format!("`{other}` is not a benchmark graph"))),
        };
        Self::new(weights, mask, kind)
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    /// Number of masked off-diagonal (directed) entries.
    pub fn directed_edge_count(&self) -> usize {
        self.mask.indexed_iter().filter(|((i, j), &m)| i != j && m).count()
    }

    /// Fraction of absent off-diagonal entries.
    pub fn sparsity(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 1.0;
        }
        1.0 - self.directed_edge_count() as f64 / (n * (n - 1)) as f64
    }

    /// Masked off-diagonal edges `(i, j, weight)` with `i < j`.
    pub fn edge_list(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.mask[[i, j]] {
                    out.push((i, j, self.weights[[i, j]]));
                }
            }
        }
        out
    }

    /// Same graph with nodes relabelled so that new node `k` is old node
    /// `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Parameter("permutation does not match graph size".into()));
        }
        let weights = Array2::from_shape_fn((n, n), |(i, j)| self.weights[[perm[i], perm[j]]]);
        let mask = Array2::from_shape_fn((n, n), |(i, j)| self.mask[[perm[i], perm[j]]]);
        Self::new(weights, mask, self.kind)
    }

    /// Disjoint union of `parts`: block-diagonal weights and mask, so a batch
    /// of windows can go through a graph layer in one pass. The kind is taken
    /// from the first part.
    pub fn block_diagonal(parts: &[&FilteredGraph]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Parameter("block_diagonal needs at least one graph".into()));
        };
        let total: usize = parts.iter().map(|g| g.n()).sum();
        let mut weights = Array2::zeros((total, total));
        let mut mask = Array2::from_elem((total, total), false);
        let mut at = 0;
        for g in parts {
            let r = at..at + g.n();
            weights.slice_mut(s![r.clone(), r.clone()]).assign(&g.weights);
            mask.slice_mut(s![r.clone(), r]).assign(&g.mask);
            at += g.n();
        }
        Ok(Self {
            weights,
            mask,
            kind: first.kind,
        })
    }

    /// Weights in the matrix fixture format.
    pub fn to_fixture(&self) -> String {
        format_matrix(&self.weights)
    }

    /// One `i j weight` line per undirected edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, j, w) in self.edge_list() {
            let _ = writeln!(out, "{i} {j} {w}");
        }
        out
    }
}

/// Free-function form of [`FilteredGraph::from_filter_result`].
pub fn from_filter_result(result: &FilterResult, kind: GraphKind) -> Result<FilteredGraph> {
    FilteredGraph::from_filter_result(result, kind)
}

/// Free-function form of [`FilteredGraph::benchmark`].
pub fn benchmark_graph(n: usize, kind: GraphKind) -> Result<FilteredGraph> {
    FilteredGraph::benchmark(n, kind)
}
