//! Maximally filtered clique forest with LoGo precision reconstruction.
//!
//! Vertices are inserted greedily. Each insertion attaches an outside vertex
//! to a separator drawn from an existing clique, creating the clique
//! `separator ∪ {vertex}` (or growing a clique that is still below the
//! maximum size). The attachment gain is the sum of squared correlations
//! between the vertex and the separator, where squared correlations below
//! the gain threshold count as zero. With minimum and maximum clique size
//! both 4 this is the triangulated maximally filtered graph: every separator
//! is a triangular face, faces are consumed once used, and the result has
//! exactly `3n − 6` edges.
//!
//! The precision is assembled from clique and separator blocks,
//! `J = Σ_c [C_c]⁻¹ − Σ_s [C_s]⁻¹`, each inverse embedded at its vertex
//! positions. It is positive definite, zero outside the clique edges, and
//! reproduces the input correlation on every within-clique entry.

use std::collections::HashSet;

use ndarray::Array2;

use super::{result_from_precision, FilterConfig, FilterMethod, FilterResult};
use crate::error::{Error, Result};
use crate::matrix::{invert_spd, CorrelationMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Insertion {
    pub vertex: usize,
    /// Index into [`CliqueForest::cliques`] of the clique the vertex attached to.
    pub host: usize,
    /// Vertices the new vertex was connected to.
    pub attachment: Vec<usize>,
    pub gain: f64,
    /// True when the host clique grew instead of a new clique being created.
    pub grew_host: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CliqueForest {
    /// Maximal cliques, each sorted ascending.
    pub cliques: Vec<Vec<usize>>,
    /// Separators (sorted) with their multiplicities.
    pub separators: Vec<(Vec<usize>, usize)>,
    pub insertion_log: Vec<Insertion>,
}

impl CliqueForest {
    /// Distinct edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = HashSet::new();
        for c in &self.cliques {
            for (a, &i) in c.iter().enumerate() {
                for &j in &c[a + 1..] {
                    set.insert((i.min(j), i.max(j)));
                }
            }
        }
        let mut edges: Vec<_> = set.into_iter().collect();
        edges.sort_unstable();
        edges
    }

    pub fn adjacency(&self, n: usize) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; n]; n];
        for (i, j) in self.edges() {
            adj[i][j] = true;
            adj[j][i] = true;
        }
        adj
    }

    /// Number of separators counted with multiplicity.
    pub fn separator_count(&self) -> usize {
        self.separators.iter().map(|(_, m)| m).sum()
    }
}

/// Builds the clique forest for `corr` and reconstructs the sparse precision.
pub fn mfcf(corr: &CorrelationMatrix, config: &FilterConfig) -> Result<FilterResult> {
    config.validate()?;
    let n = corr.n();
    if n < config.max_clique {
        return Err(Error::Parameter(format!(
            "clique forest needs at least max_clique = {} series, got {n}",
            config.max_clique
        )));
    }
    let forest = build_forest(corr, config);
    let precision = logo_precision(corr.entries(), &forest)?;
    result_from_precision(FilterMethod::Mfcf, precision, Some(forest), 0.0)
}

fn build_forest(corr: &CorrelationMatrix, config: &FilterConfig) -> CliqueForest {
    let n = corr.n();
    let c = corr.entries();
    let gain = |u: usize, v: usize| {
        let sq = c[[u, v]] * c[[u, v]];
        if sq >= config.mfcf_gain_threshold {
            sq
        } else {
            0.0
        }
    };

    // seed: the max_clique vertices with the largest absolute row sums
    let mut strength: Vec<(usize, f64)> = (0..n)
        .map(|i| (i, (0..n).filter(|&j| j != i).map(|j| c[[i, j]].abs()).sum()))
        .collect();
    strength.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut seed: Vec<usize> = strength[..config.max_clique].iter().map(|&(i, _)| i).collect();
    seed.sort_unstable();

    let mut placed = vec![false; n];
    for &v in &seed {
        placed[v] = true;
    }
    let mut forest = CliqueForest {
        cliques: vec![seed],
        ..Default::default()
    };
    let face_size = config.max_clique - 1;
    let mut used_faces: HashSet<Vec<usize>> = HashSet::new();

    while placed.iter().any(|p| !p) {
        let mut best: Option<Candidate> = None;
        for v in (0..n).filter(|&v| !placed[v]) {
            for (ci, clique) in forest.cliques.iter().enumerate() {
                let lo = config.min_clique - 1;
                let hi = (config.max_clique - 1).min(clique.len());
                for size in lo..=hi {
                    let grows = size == clique.len();
                    if grows && clique.len() >= config.max_clique {
                        continue;
                    }
                    for subset in combinations(clique, size) {
                        if !grows && size == face_size && used_faces.contains(&subset) {
                            continue;
                        }
                        let g: f64 = subset.iter().map(|&u| gain(u, v)).sum();
                        let cand = Candidate {
                            vertex: v,
                            host: ci,
                            attachment: subset,
                            gain: g,
                            grows,
                        };
                        if best.as_ref().is_none_or(|b| cand.beats(b)) {
                            best = Some(cand);
                        }
                    }
                }
            }
        }
        let b = best.expect("an unused face always exists while vertices remain");
        placed[b.vertex] = true;
        if b.grows {
            let host = &mut forest.cliques[b.host];
            host.push(b.vertex);
            host.sort_unstable();
        } else {
            if b.attachment.len() == face_size {
                used_faces.insert(b.attachment.clone());
            }
            let mut clique = b.attachment.clone();
            clique.push(b.vertex);
            clique.sort_unstable();
            forest.cliques.push(clique);
            match forest.separators.iter_mut().find(|(s, _)| *s == b.attachment) {
                Some((_, m)) => *m += 1,
                None => forest.separators.push((b.attachment.clone(), 1)),
            }
        }
        forest.insertion_log.push(Insertion {
            vertex: b.vertex,
            host: b.host,
            attachment: b.attachment,
            gain: b.gain,
            grew_host: b.grows,
        });
    }
    forest
}

struct Candidate {
    vertex: usize,
    host: usize,
    attachment: Vec<usize>,
    gain: f64,
    grows: bool,
}

impl Candidate {
    /// Strictly higher gain wins; on equal gain the smaller attachment wins,
    /// then growing an existing clique. Remaining ties keep the earlier
    /// candidate (lower vertex, lower clique, lexicographic subset).
    fn beats(&self, other: &Candidate) -> bool {
        if self.gain != other.gain {
            return self.gain > other.gain;
        }
        if self.attachment.len() != other.attachment.len() {
            return self.attachment.len() < other.attachment.len();
        }
        self.grows && !other.grows
    }
}

/// All `k`-subsets of `items`, in lexicographic order of positions.
fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn extend(items: &[usize], k: usize, from: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        let needed = k - current.len();
        for i in from..=items.len().saturating_sub(needed) {
            if i >= items.len() {
                break;
            }
            current.push(items[i]);
            extend(items, k, i + 1, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    if k <= items.len() {
        extend(items, k, 0, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// `Σ_c [C_c]⁻¹ − Σ_s m_s·[C_s]⁻¹` over the forest's cliques and separators.
fn logo_precision(c: &Array2<f64>, forest: &CliqueForest) -> Result<Array2<f64>> {
    let n = c.nrows();
    let mut j = Array2::<f64>::zeros((n, n));
    let mut embed = |set: &[usize], sign: f64| -> Result<()> {
        let block = Array2::from_shape_fn((set.len(), set.len()), |(a, b)| c[[set[a], set[b]]]);
        let inv = invert_spd(&block)?;
        for (a, &ia) in set.iter().enumerate() {
            for (b, &ib) in set.iter().enumerate() {
                j[[ia, ib]] += sign * inv[[a, b]];
            }
        }
        Ok(())
    };
    for clique in &forest.cliques {
        embed(clique, 1.0)?;
    }
    for (sep, mult) in &forest.separators {
        embed(sep, -(*mult as f64))?;
    }
    Ok(j)
}

/// Whether the graph given by a symmetric adjacency matrix is chordal.
///
/// Orders vertices by maximum cardinality search and then checks that the
/// reverse order is a perfect elimination ordering: for every vertex, its
/// neighbors later in the elimination order form a clique.
pub fn is_chordal(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    let mut weight = vec![0usize; n];
    let mut visited = vec![false; n];
    let mut visit_order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !visited[v])
            .max_by(|&a, &b| weight[a].cmp(&weight[b]).then(b.cmp(&a)))
            .expect("unvisited vertex remains");
        visited[v] = true;
        visit_order.push(v);
        for u in 0..n {
            if adj[v][u] && !visited[u] {
                weight[u] += 1;
            }
        }
    }
    // elimination order is the reverse visit order
    let mut position = vec![0usize; n];
    for (i, &v) in visit_order.iter().rev().enumerate() {
        position[v] = i;
    }
    for v in 0..n {
        let later: Vec<usize> = (0..n)
            .filter(|&u| adj[v][u] && u != v && position[u] > position[v])
            .collect();
        for (a, &x) in later.iter().enumerate() {
            for &y in &later[a + 1..] {
                if !adj[x][y] {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(min: usize, max: usize, threshold: f64) -> FilterConfig {
        FilterConfig {
            method: FilterMethod::Mfcf,
            min_clique: min,
            max_clique: max,
            mfcf_gain_threshold: threshold,
            ..Default::default()
        }
    }

    #[test]
    fn combinations_enumerate_all_subsets() {
        assert_eq!(
            combinations(&[1, 2, 3, 4], 3),
            vec![vec![1, 2, 3], vec![1, 2, 4], vec![1, 3, 4], vec![2, 3, 4]]
        );
        assert_eq!(combinations(&[5, 6], 2), vec![vec![5, 6]]);
        assert_eq!(combinations(&[5, 6, 7], 1).len(), 3);
        assert_eq!(combinations(&[5, 6], 0), vec![Vec::<usize>::new()]);
        assert!(combinations(&[5], 2).is_empty());
    }

    #[test]
    fn chordality_examples() {
        // 4-cycle is not chordal; adding a chord fixes it
        let mut adj = vec![vec![false; 4]; 4];
        for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
            adj[a][b] = true;
            adj[b][a] = true;
        }
        assert!(!is_chordal(&adj));
        adj[0][2] = true;
        adj[2][0] = true;
        assert!(is_chordal(&adj));
    }

    #[test]
    fn four_series_is_one_clique() {
        let c = CorrelationMatrix::try_from_matrix(ndarray::array![
            [1.0, 0.5, 0.3, 0.2],
            [0.5, 1.0, 0.4, 0.1],
            [0.3, 0.4, 1.0, 0.25],
            [0.2, 0.1, 0.25, 1.0]
        ])
        .unwrap();
        let r = mfcf(&c, &cfg(4, 4, 0.0)).unwrap();
        let forest = r.forest.as_ref().unwrap();
        assert_eq!(forest.cliques, vec![vec![0, 1, 2, 3]]);
        assert!(forest.separators.is_empty());
        assert_eq!(r.sparsity, 0.0);
        let direct = invert_spd(c.entries()).unwrap();
        for (a, b) in r.precision.entries().iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_series() {
        let c = CorrelationMatrix::identity(3);
        assert!(matches!(mfcf(&c, &cfg(4, 4, 0.0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn threshold_with_small_cliques_thins_the_graph() {
        let n = 8;
        let c = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                1.0
            } else {
                0.3 / (1.0 + (i as f64 - j as f64).abs())
            }
        });
        let c = CorrelationMatrix::try_from_matrix(c).unwrap();
        let dense = mfcf(&c, &cfg(2, 4, 0.0)).unwrap();
        let thin = mfcf(&c, &cfg(2, 4, 0.02)).unwrap();
        assert!(
            thin.sparsity > dense.sparsity,
            "{} vs {}",
            thin.sparsity,
            dense.sparsity
        );
        let forest = thin.forest.unwrap();
        assert!(is_chordal(&forest.adjacency(n)));
    }
}
