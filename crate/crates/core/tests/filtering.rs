mod common;

use common::{brute_force_2x2, factor_correlation, gaussian, oracle_objective, proximal_oracle, rng, to_nalgebra};
use fsst_core::filtering::{
    apply_filter, glasso, glasso_with_options, is_chordal, lambda_grid, mfcf, shrink, FilterConfig, FilterMethod,
    GlassoOptions,
};
use fsst_core::graph::{FilteredGraph, GraphKind};
use fsst_core::matrix::{correlation_of, invert_spd, is_positive_definite, CorrelationMatrix};
use ndarray::Array2;
use proptest::prelude::*;

fn our_objective(corr: &CorrelationMatrix, lambda: f64) -> f64 {
    let result = glasso(corr, lambda).unwrap();
    oracle_objective(
        &to_nalgebra(corr.entries()),
        &to_nalgebra(result.precision.entries()),
        lambda,
    )
}

#[test]
fn glasso_2x2_matches_grid_search() {
    for (r, lambda) in [(0.6, 0.1), (-0.8, 0.3), (0.3, 0.5), (0.95, 0.01)] {
        let corr = CorrelationMatrix::try_from_matrix(ndarray::array![[1.0, r], [r, 1.0]]).unwrap();
        let ours = our_objective(&corr, lambda);
        let oracle = brute_force_2x2(&to_nalgebra(corr.entries()), lambda);
        assert!((ours - oracle).abs() < 1e-5, "r={r} λ={lambda}: {ours} vs {oracle}");
    }
}

#[test]
fn glasso_3x3_matches_proximal_search() {
    for seed in 0..6 {
        let corr = factor_correlation(3, 30, 1.0, seed);
        for lambda in [0.02, 0.1, 0.3] {
            let ours = our_objective(&corr, lambda);
            let oracle = proximal_oracle(&to_nalgebra(corr.entries()), lambda);
            assert!(
                (ours - oracle).abs() < 1e-5,
                "seed {seed} λ={lambda}: {ours} vs {oracle}"
            );
        }
    }
}

#[test]
fn glasso_without_penalty_is_the_inverse() {
    let corr = factor_correlation(6, 80, 0.7, 11);
    let result = glasso(&corr, 0.0).unwrap();
    let inverse = invert_spd(corr.entries()).unwrap();
    let worst = (result.precision.entries() - &inverse)
        .iter()
        .fold(0.0f64, |w, v| w.max(v.abs()));
    assert!(worst < 1e-4, "{worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn glasso_objective_never_increases(n in 3usize..9, seed in any::<u64>(), lambda in 0.0f64..0.6) {
        let corr = factor_correlation(n, 30, 0.8, seed);
        let (result, trace) = glasso_with_options(&corr, lambda, &GlassoOptions::default()).unwrap();
        for w in trace.objectives.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        prop_assert!(is_positive_definite(result.precision.entries()).unwrap());
        let p = result.precision.entries();
        prop_assert_eq!(p, &p.t().to_owned());
    }

    #[test]
    fn glasso_2x2_sparsity_grows_with_lambda(seed in any::<u64>(), t in 4usize..40) {
        let corr = factor_correlation(2, t, 0.6, seed);
        let mut last = -1.0;
        for lambda in lambda_grid() {
            let s = glasso(&corr, lambda).unwrap().sparsity;
            prop_assert!(s >= last, "sparsity fell from {last} to {s} at λ={lambda}");
            last = s;
        }
    }

    // From three series on, the support along the λ path need not be nested
    // (see glasso_support_is_not_always_nested), so optimality is checked.
    #[test]
    fn glasso_solutions_satisfy_optimality_conditions(n in 3usize..9, seed in any::<u64>()) {
        let corr = factor_correlation(n, 25, 0.6, seed);
        let s = corr.entries();
        for lambda in lambda_grid() {
            let theta = glasso(&corr, lambda).unwrap().precision.entries().clone();
            let w = invert_spd(&theta).unwrap();
            for i in 0..n {
                prop_assert!((w[[i, i]] - s[[i, i]]).abs() < 1e-5);
                for j in (0..n).filter(|&j| j != i) {
                    let slack = w[[i, j]] - s[[i, j]];
                    if theta[[i, j]] == 0.0 {
                        prop_assert!(slack.abs() <= lambda + 1e-5, "λ={lambda} ({i},{j}) slack {slack}");
                    } else {
                        let expected = lambda * theta[[i, j]].signum();
                        prop_assert!((slack - expected).abs() < 1e-5, "λ={lambda} ({i},{j}) {slack} vs {expected}");
                    }
                }
            }
        }
    }

    #[test]
    fn glasso_is_permutation_equivariant(n in 3usize..8, seed in any::<u64>(), lambda in 0.01f64..0.4) {
        let corr = factor_correlation(n, 30, 0.8, seed);
        let perm: Vec<usize> = (0..n).rev().collect();
        let permuted = CorrelationMatrix::try_from_matrix(Array2::from_shape_fn((n, n), |(i, j)| {
            corr.entries()[[perm[i], perm[j]]]
        }))
        .unwrap();
        let a = glasso(&corr, lambda).unwrap();
        let b = glasso(&permuted, lambda).unwrap();
        for i in 0..n {
            for j in 0..n {
                let x = a.precision.entries()[[perm[i], perm[j]]];
                let y = b.precision.entries()[[i, j]];
                prop_assert!((x - y).abs() < 1e-5, "({i},{j}) {x} vs {y}");
            }
        }
    }

    #[test]
    fn shrinkage_keeps_unit_diagonal(n in 2usize..9, seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let corr = factor_correlation(n, 20, 0.5, seed);
        let r = shrink(&corr, alpha).unwrap();
        for i in 0..n {
            prop_assert_eq!(r.correlation.entries()[[i, i]], 1.0);
        }
        if alpha < 1.0 {
            prop_assert_eq!(r.sparsity, 0.0);
        }
    }
}

/// Sparsity along the λ grid on a fixed battery of random problems; returns
/// the number of problems whose sparsity ever decreases.
fn non_nested_paths(n: usize, t: usize, problems: u64) -> usize {
    (0..problems)
        .filter(|&seed| {
            let corr = factor_correlation(n, t, 0.6, seed);
            let path: Vec<f64> = lambda_grid()
                .into_iter()
                .map(|l| glasso(&corr, l).unwrap().sparsity)
                .collect();
            path.windows(2).any(|w| w[1] < w[0])
        })
        .count()
}

#[test]
fn glasso_sparsity_grows_with_lambda_on_small_problems() {
    assert_eq!(non_nested_paths(2, 30, 100), 0);
    assert_eq!(non_nested_paths(3, 30, 100), 0);
}

#[test]
fn glasso_support_is_not_always_nested() {
    // 3 series, 16 samples: the (0, 1) entry is zero at λ≈0.038 and nonzero
    // at λ≈0.055. Both solutions satisfy the optimality conditions.
    let corr = factor_correlation(3, 16, 0.6, 15127667637217790571);
    let grid = lambda_grid();
    let (low, high) = (grid[10], grid[11]);
    let a = glasso(&corr, low).unwrap();
    let b = glasso(&corr, high).unwrap();
    assert_eq!(a.precision.entries()[[0, 1]], 0.0);
    assert!(b.precision.entries()[[0, 1]].abs() > 1e-3);
    assert!(a.sparsity > b.sparsity);
    let w = invert_spd(b.precision.entries()).unwrap();
    let slack = w[[0, 1]] - corr.entries()[[0, 1]];
    assert!((slack + high).abs() < 1e-6, "{slack}");
    let w = invert_spd(a.precision.entries()).unwrap();
    assert!((w[[0, 1]] - corr.entries()[[0, 1]]).abs() <= low);
}

fn tmfg_config() -> FilterConfig {
    FilterConfig {
        min_clique: 4,
        max_clique: 4,
        ..FilterConfig::with_method(FilterMethod::Mfcf)
    }
}

/// Entries of `precision⁻¹` inside every clique must equal the input
/// correlation.
fn logo_consistency_error(corr: &CorrelationMatrix, result: &fsst_core::filtering::FilterResult) -> f64 {
    let implied = invert_spd(result.precision.entries()).unwrap();
    let forest = result.forest.as_ref().unwrap();
    let mut worst: f64 = 0.0;
    for clique in &forest.cliques {
        for &i in clique {
            for &j in clique {
                worst = worst.max((implied[[i, j]] - corr.entries()[[i, j]]).abs());
            }
        }
    }
    worst
}

#[test]
fn tmfg_structure_on_random_matrices() {
    for (n, seed) in [(10, 1), (10, 2), (20, 3), (20, 4), (15, 5)] {
        let corr = factor_correlation(n, 3 * n, 0.7, seed);
        let result = mfcf(&corr, &tmfg_config()).unwrap();
        let forest = result.forest.as_ref().unwrap();
        assert_eq!(forest.edges().len(), 3 * n - 6, "n={n}");
        assert!(is_chordal(&forest.adjacency(n)));
        assert!(is_positive_definite(result.precision.entries()).unwrap());
        // the precision pattern is exactly the forest's edges
        let mut pattern: Vec<(usize, usize)> = result
            .precision
            .pattern()
            .iter()
            .copied()
            .filter(|(i, j)| i < j)
            .collect();
        pattern.sort();
        let mut edges = forest.edges();
        edges.sort();
        assert_eq!(pattern, edges);
        assert!(logo_consistency_error(&corr, &result) < 1e-6);
    }
}

#[test]
fn tmfg_on_ten_series_has_expected_sparsity() {
    let corr = factor_correlation(10, 40, 0.6, 9);
    let result = mfcf(&corr, &tmfg_config()).unwrap();
    assert!((result.sparsity - (1.0 - 24.0 / 45.0)).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mfcf_graphs_are_chordal_and_pd(
        n in 5usize..14,
        seed in any::<u64>(),
        min in 2usize..4,
        extra in 0usize..3,
        threshold in 0.0f64..0.3,
    ) {
        let corr = factor_correlation(n, 2 * n, 0.8, seed);
        let config = FilterConfig {
            min_clique: min,
            max_clique: min + extra,
            mfcf_gain_threshold: threshold,
            ..FilterConfig::with_method(FilterMethod::Mfcf)
        };
        let result = mfcf(&corr, &config).unwrap();
        let forest = result.forest.as_ref().unwrap();
        prop_assert!(is_chordal(&forest.adjacency(n)));
        prop_assert!(is_positive_definite(result.precision.entries()).unwrap());
        prop_assert!(logo_consistency_error(&corr, &result) < 1e-6);
    }

    #[test]
    fn mfcf_edge_set_is_permutation_equivariant(n in 5usize..12, seed in any::<u64>()) {
        let corr = factor_correlation(n, 40, 0.5, seed);
        let perm: Vec<usize> = (0..n).map(|i| (i + 2) % n).collect();
        let permuted = CorrelationMatrix::try_from_matrix(Array2::from_shape_fn((n, n), |(i, j)| {
            corr.entries()[[perm[i], perm[j]]]
        }))
        .unwrap();
        let a = mfcf(&corr, &tmfg_config()).unwrap();
        let b = mfcf(&permuted, &tmfg_config()).unwrap();
        let mut mapped: Vec<(usize, usize)> = b
            .forest
            .unwrap()
            .edges()
            .into_iter()
            .map(|(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j])))
            .collect();
        mapped.sort();
        let mut original = a.forest.unwrap().edges();
        original.sort();
        prop_assert_eq!(mapped, original);
    }

    #[test]
    fn graph_mask_matches_precision_sparsity(n in 3usize..10, seed in any::<u64>(), lambda in 0.0f64..0.5) {
        let corr = factor_correlation(n, 30, 0.7, seed);
        let result = glasso(&corr, lambda).unwrap();
        let graph = FilteredGraph::from_filter_result(&result, GraphKind::InverseCorrelation).unwrap();
        let density = graph.directed_edge_count() as f64 / (n * (n - 1)) as f64;
        prop_assert!((density - (1.0 - result.sparsity)).abs() < 1e-12);
    }
}

#[test]
fn every_method_handles_a_noisy_panel() {
    let data = gaussian(30, 8, &mut rng(17));
    let corr = correlation_of(data.view());
    for method in [
        FilterMethod::Empirical,
        FilterMethod::Shrinkage,
        FilterMethod::Glasso,
        FilterMethod::Mfcf,
    ] {
        let r = apply_filter(&corr, &FilterConfig::with_method(method)).unwrap();
        assert!(is_positive_definite(r.precision.entries()).unwrap(), "{method}");
        assert!((0.0..=1.0).contains(&r.sparsity));
    }
}
