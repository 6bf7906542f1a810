mod common;

use common::{gaussian, rng};
use fsst_core::matrix::correlation_of;
use fsst_core::neural::NetworkConfig;
use fsst_core::pipeline::{
    compute_metrics, parse_csv, run_experiment, synthesize_dataset, synthesize_with, ExperimentConfig, SynthConfig,
};
use proptest::prelude::*;
use rand::Rng;

fn off_diagonals(c: &ndarray::Array2<f64>) -> Vec<f64> {
    let n = c.nrows();
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| c[[i, j]]))
        .collect()
}

#[test]
fn independent_noise_is_nearly_uncorrelated() {
    let data = gaussian(1000, 10, &mut rng(42));
    let c = correlation_of(data.view());
    assert!(off_diagonals(c.entries()).iter().all(|v| v.abs() < 0.15));
}

#[test]
fn zero_loading_gives_uncorrelated_stores() {
    let config = SynthConfig {
        factor_loading: 0.0,
        seasonality: 0.0,
        trend: 0.0,
        n_items: 2,
        ..SynthConfig::default()
    };
    let data = synthesize_with(&config, 5).unwrap();
    let bound = 3.0 / (config.n_days as f64).sqrt();
    for item in 0..config.n_items {
        let c = correlation_of(data.item_sales(item).view());
        for v in off_diagonals(c.entries()) {
            assert!(v.abs() < bound, "item {item}: {v} outside ±{bound}");
        }
    }
}

#[test]
fn high_loading_gives_correlated_stores() {
    let config = SynthConfig {
        factor_loading: 2.0,
        n_items: 2,
        ..SynthConfig::default()
    };
    let data = synthesize_with(&config, 5).unwrap();
    for item in 0..config.n_items {
        let c = correlation_of(data.item_sales(item).view());
        let values = off_diagonals(c.entries());
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean > 0.5, "item {item}: mean correlation {mean}");
    }
}

#[test]
fn generated_csv_parses_back() {
    let data = synthesize_dataset(4, 3, 60, 9).unwrap();
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    assert_eq!(parse_csv(buf.as_slice()).unwrap(), data);
    assert_eq!(data.record_count(), 4 * 3 * 60);
}

#[test]
fn metrics_hand_example() {
    let m = compute_metrics(&[12.0, 16.0], &[10.0, 20.0]).unwrap();
    assert_eq!(m.rmse, 10f64.sqrt());
    assert_eq!(m.mae, 3.0);
    assert_eq!(m.mape, 20.0);
}

proptest! {
    #[test]
    fn rmse_never_below_mae(seed in any::<u64>(), n in 1usize..200) {
        let mut r = rng(seed);
        let truth: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..50.0)).collect();
        let pred: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..50.0)).collect();
        let m = compute_metrics(&pred, &truth).unwrap();
        prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
        prop_assert!(m.mae >= 0.0 && m.mape >= 0.0);
    }
}

#[test]
fn experiment_runs_are_reproducible() {
    let data = synthesize_dataset(4, 2, 120, 3).unwrap();
    let config = ExperimentConfig {
        seeds: vec![1, 2],
        network: NetworkConfig {
            epochs: 3,
            lstm_hidden: 4,
            gnn_dim: 3,
            mlp_hidden: 4,
            ..NetworkConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let a = run_experiment(&data, &config, 1).unwrap();
    let b = run_experiment(&data, &config, 2).unwrap();
    assert_eq!(a.runs, b.runs);
    assert_eq!(a, b);
    assert_eq!(a.runs.len(), 2);
    assert_eq!(a.products.len(), 2);
}
