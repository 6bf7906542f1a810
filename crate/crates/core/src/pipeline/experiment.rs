//! End-to-end training and evaluation of one configuration over every item
//! of a dataset and every seed.
//!
//! Each item is an independent problem over its stores. Per item: the panel
//! is normalized per store with training-segment statistics; every window of
//! `lookback` days predicts the following day; windows whose target falls in
//! the first `train_fraction` of days train the model (the trailing part of
//! those validates for early stopping) and the rest are the test set.
//! Graphs and node features depend only on the window, so they are built
//! once per item and shared across seeds.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::SalesDataset;
use super::metrics::{compute_metrics, Metrics, Summary};
use crate::error::{Error, Result};
use crate::filtering::{apply_filter, empirical, select_alpha_cv, select_lambda_cv, FilterConfig, FilterMethod};
use crate::graph::{benchmark_graph, FilteredGraph, GraphKind};
use crate::matrix::{correlation_of, TimeSeriesPanel};
use crate::neural::features::moments;
use crate::neural::{Adam, AdamConfig, FsstModel, ModelKind, NetworkConfig, ParamStore, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lookback: usize,
    pub train_fraction: f64,
    pub seeds: Vec<u64>,
    pub model: ModelKind,
    pub graph_kind: GraphKind,
    pub filter: FilterConfig,
    /// Pick the shrinkage α or glasso λ by cross-validation on each item's
    /// training segment instead of using the configured value.
    pub select_filter_params: bool,
    pub network: NetworkConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lookback: 14,
            train_fraction: 0.8,
            seeds: (1..=10).collect(),
            model: ModelKind::FsstGcn,
            graph_kind: GraphKind::InverseCorrelation,
            filter: FilterConfig::default(),
            select_filter_params: false,
            network: NetworkConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback < 2 {
            return Err(Error::Parameter(format!(
                "lookback must be at least 2, got {}",
                self.lookback
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Parameter("at least one seed is required".into()));
        }
        self.filter.validate()?;
        self.network.validate()
    }

    /// Whether per-window filtering is part of this configuration.
    pub fn uses_filter(&self) -> bool {
        self.model.uses_graph() && !self.graph_kind.is_benchmark()
    }

    /// Row label in the style `FSST-GNN (GCN) / GLASSO / Inv Cor`.
    pub fn label(&self) -> String {
        if !self.model.uses_graph() {
            self.model.label().to_string()
        } else if self.graph_kind.is_benchmark() {
            format!("{} / {}", self.model.label(), self.graph_kind.label())
        } else {
            format!(
                "{} / {} / {}",
                self.model.label(),
                self.filter.method,
                self.graph_kind.label()
            )
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Machine-readable result of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub label: String,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub mape_excluded: usize,
    /// Mean realized sparsity of the window graphs (absent for the LSTM).
    pub sparsity: Option<f64>,
    pub fallback_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMetrics {
    pub item: u32,
    pub rmse: Summary,
    pub mae: Summary,
    pub mape: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub label: String,
    pub runs: Vec<RunRecord>,
    pub rmse: Summary,
    pub mae: Summary,
    pub mape: Summary,
    pub sparsity: Option<f64>,
    /// Windows whose filter failed and fell back to the empirical matrix.
    pub fallback_count: usize,
    pub products: Vec<ProductMetrics>,
    /// Filter parameter chosen per item when selection is enabled.
    pub selected_filter_params: Vec<(u32, f64)>,
}

/// Inputs of one forecast: a normalized `lookback × N` window plus, for graph
/// models, its graph and `N × 4` node features.
pub struct SampleInput<'a> {
    pub window: ArrayView2<'a, f64>,
    pub spatial: Option<(&'a FilteredGraph, &'a Array2<f64>)>,
}

/// One item's normalized panel with its windows, graphs and split.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub item: u32,
    raw: Array2<f64>,
    normalized: Array2<f64>,
    mean: Array1<f64>,
    scale: Array1<f64>,
    lookback: usize,
    /// Target day indices for training, validation and test.
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
    /// Per target day (offset by `lookback`), or a single shared graph.
    graphs: Vec<FilteredGraph>,
    features: Vec<Array2<f64>>,
    pub sparsity: Option<f64>,
    pub fallback_count: usize,
    pub selected_param: Option<f64>,
}

impl PreparedItem {
    /// Normalizes, splits and builds graphs for one item's `days × stores`
    /// sales.
    pub fn new(item: u32, raw: &Array2<f64>, config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (days, n) = raw.dim();
        let lookback = config.lookback;
        let split = (config.train_fraction * days as f64).round() as usize;
        let train_targets = split.saturating_sub(lookback);
        let validation_len = ((train_targets as f64) * config.network.validation_fraction).ceil() as usize;
        if n < 2 || train_targets < validation_len + 2 || validation_len == 0 || split >= days {
            return Err(Error::Data(format!(
                "item {item}: {days} days are too few for lookback {lookback} and train fraction {}",
                config.train_fraction
            )));
        }
        let train = lookback..split - validation_len;
        let validation = split - validation_len..split;
        let test = split..days;

        let fit = raw.slice(ndarray::s![..split, ..]);
        let mean = fit.mean_axis(Axis(0)).expect("nonempty training segment");
        let scale = fit.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let normalized = (raw - &mean) / &scale;

        let mut prepared = Self {
            item,
            raw: raw.clone(),
            normalized,
            mean,
            scale,
            lookback,
            train,
            validation,
            test,
            graphs: Vec::new(),
            features: Vec::new(),
            sparsity: None,
            fallback_count: 0,
            selected_param: None,
        };
        if config.model.uses_graph() {
            prepared.build_spatial(config, split)?;
        }
        Ok(prepared)
    }

    fn build_spatial(&mut self, config: &ExperimentConfig, split: usize) -> Result<()> {
        let n = self.normalized.ncols();
        let days = self.normalized.nrows();
        self.features = (self.lookback..days)
            .map(|t| moments(self.window(t)))
            .collect::<Result<_>>()?;
        if config.graph_kind.is_benchmark() {
            let graph = benchmark_graph(n, config.graph_kind)?;
            self.sparsity = Some(graph.sparsity());
            self.graphs = vec![graph];
            return Ok(());
        }

        let mut filter = config.filter.clone();
        if config.select_filter_params {
            let training = TimeSeriesPanel::from_values(self.normalized.slice(ndarray::s![..split, ..]).to_owned())?;
            match filter.method {
                FilterMethod::Shrinkage => {
                    filter.alpha = select_alpha_cv(&training, filter.cv_folds)?;
                    self.selected_param = Some(filter.alpha);
                }
                FilterMethod::Glasso => {
                    filter.lambda = select_lambda_cv(&training, filter.cv_folds)?;
                    self.selected_param = Some(filter.lambda);
                }
                FilterMethod::Empirical | FilterMethod::Mfcf => {}
            }
        }

        let mut sparsity_total = 0.0;
        self.graphs.reserve(days - self.lookback);
        for t in self.lookback..days {
            let corr = correlation_of(self.window(t));
            let result = match apply_filter(&corr, &filter) {
                Ok(r) => r,
                Err(_) => {
                    self.fallback_count += 1;
                    empirical(&corr)?
                }
            };
            sparsity_total += result.sparsity;
            self.graphs
                .push(FilteredGraph::from_filter_result(&result, config.graph_kind)?);
        }
        self.sparsity = Some(sparsity_total / (days - self.lookback) as f64);
        Ok(())
    }

    /// Normalized window preceding target day `t`.
    pub fn window(&self, t: usize) -> ArrayView2<'_, f64> {
        self.normalized.slice(ndarray::s![t - self.lookback..t, ..])
    }

    pub fn input(&self, t: usize) -> SampleInput<'_> {
        let spatial = if self.features.is_empty() {
            None
        } else {
            let k = t - self.lookback;
            let graph = if self.graphs.len() == 1 {
                &self.graphs[0]
            } else {
                &self.graphs[k]
            };
            Some((graph, &self.features[k]))
        };
        SampleInput {
            window: self.window(t),
            spatial,
        }
    }

    /// Normalized next-day values (`N × 1`).
    pub fn target(&self, t: usize) -> Array2<f64> {
        self.normalized.row(t).to_owned().insert_axis(Axis(1))
    }

    /// Back to sales units.
    pub fn denormalize(&self, normalized: &Array2<f64>) -> Vec<f64> {
        normalized
            .column(0)
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    pub fn truth(&self, t: usize) -> Vec<f64> {
        self.raw.row(t).to_vec()
    }

    /// Graph used for target day `t`, if any.
    pub fn graph(&self, t: usize) -> Option<&FilteredGraph> {
        self.input(t).spatial.map(|(g, _)| g)
    }

    /// Test-segment predictions (in sales units) from `predict`, which maps a
    /// sample to normalized `N × 1` predictions, paired with the truth.
    pub fn evaluate_with<F>(&self, mut predict: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: FnMut(&SampleInput<'_>) -> Result<Array2<f64>>,
    {
        let mut predictions = Vec::new();
        let mut truth = Vec::new();
        for t in self.test.clone() {
            let z = predict(&self.input(t))?;
            predictions.extend(self.denormalize(&z));
            truth.extend(self.truth(t));
        }
        Ok((predictions, truth))
    }
}

/// Seed for the (item, run seed) unit; items get unrelated streams.
fn unit_seed(item: u32, seed: u64) -> u64 {
    let mut z = seed ^ (u64::from(item) << 32) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Several windows stacked side by side: series of window `b` occupy
/// columns (and graph nodes) `b·N..(b+1)·N`, so one forward pass covers the
/// whole batch and its loss is the mean of the per-window losses.
struct Batch {
    window: Array2<f64>,
    spatial: Option<(FilteredGraph, Array2<f64>)>,
    target: Array2<f64>,
}

impl Batch {
    fn new(item: &PreparedItem, days: &[usize]) -> Result<Self> {
        let inputs: Vec<SampleInput<'_>> = days.iter().map(|&t| item.input(t)).collect();
        let windows: Vec<_> = inputs.iter().map(|i| i.window).collect();
        let window = ndarray::concatenate(Axis(1), &windows).expect("windows share a lookback");
        let targets: Vec<Array2<f64>> = days.iter().map(|&t| item.target(t)).collect();
        let target_views: Vec<_> = targets.iter().map(|t| t.view()).collect();
        let target = ndarray::concatenate(Axis(0), &target_views).expect("targets are columns");
        let spatial = if inputs.first().is_some_and(|i| i.spatial.is_some()) {
            let graphs: Vec<&FilteredGraph> = inputs.iter().map(|i| i.spatial.expect("checked").0).collect();
            let features: Vec<_> = inputs.iter().map(|i| i.spatial.expect("checked").1.view()).collect();
            Some((
                FilteredGraph::block_diagonal(&graphs)?,
                ndarray::concatenate(Axis(0), &features).expect("feature widths agree"),
            ))
        } else {
            None
        };
        Ok(Self {
            window,
            spatial,
            target,
        })
    }

    fn spatial(&self) -> Option<(&FilteredGraph, &Array2<f64>)> {
        self.spatial.as_ref().map(|(g, f)| (g, f))
    }
}

fn rmse_on(model: &FsstModel, item: &PreparedItem, days: Range<usize>, batch_size: usize) -> Result<f64> {
    let days: Vec<usize> = days.collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in days.chunks(batch_size) {
        let batch = Batch::new(item, chunk)?;
        let pred = model.predict(batch.window.view(), batch.spatial())?;
        total += (&pred - &batch.target).mapv(|e| e * e).sum();
        count += pred.len();
    }
    Ok((total / count as f64).sqrt())
}

/// Trains a fresh model for `item` with minibatch Adam on the MSE, keeping
/// the parameters with the best validation RMSE.
pub fn train_model(item: &PreparedItem, config: &ExperimentConfig, seed: u64) -> Result<FsstModel> {
    let net = &config.network;
    let unit = unit_seed(item.item, seed);
    let mut model = FsstModel::new(config.model, net, unit)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(unit.wrapping_add(1));
    let mut adam = Adam::new(
        model.params(),
        AdamConfig {
            learning_rate: net.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = item.train.clone().collect();
    let mut best = (
        rmse_on(&model, item, item.validation.clone(), net.batch_size)?,
        model.params().clone(),
    );
    let mut stale = 0;
    for _ in 0..net.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(net.batch_size) {
            let batch = Batch::new(item, batch)?;
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let pred = model.forward(&mut tape, &bound, batch.window.view(), batch.spatial())?;
            let target = tape.constant(batch.target);
            let loss = tape.mse(pred, target);
            tape.backward(loss)?;
            adam.step(model.params_mut(), &bound.grads(&tape))?;
        }
        let validation = rmse_on(&model, item, item.validation.clone(), net.batch_size)?;
        if !validation.is_finite() {
            return Err(Error::Numeric {
                param: "validation loss".into(),
            });
        }
        if validation < best.0 {
            best = (validation, model.params().clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= net.patience {
                break;
            }
        }
    }
    model.params_mut().load_values_from(&best.1)?;
    Ok(model)
}

/// Test-set predictions and truth of a trained model.
pub fn evaluate_model(model: &FsstModel, item: &PreparedItem) -> Result<(Vec<f64>, Vec<f64>)> {
    item.evaluate_with(|input| model.predict(input.window, input.spatial))
}

/// Trained parameters of every (item, seed) unit.
#[derive(Debug, Clone)]
pub struct TrainedUnit {
    pub item: u32,
    pub seed: u64,
    pub params: ParamStore,
}

struct UnitOutcome {
    predictions: Vec<f64>,
    truth: Vec<f64>,
    params: ParamStore,
}

/// Builds a thread pool of `jobs` workers (0: one per core).
pub fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start {jobs} workers: {e}")))
}

/// Prepares every item of `dataset` (in parallel on the current pool).
pub fn prepare_items(dataset: &SalesDataset, config: &ExperimentConfig) -> Result<Vec<PreparedItem>> {
    config.validate()?;
    (0..dataset.items().len())
        .into_par_iter()
        .map(|k| PreparedItem::new(dataset.items()[k], dataset.item_sales(k), config))
        .collect()
}

/// Trains and evaluates `config` on every item for every seed.
pub fn run_experiment(dataset: &SalesDataset, config: &ExperimentConfig, jobs: usize) -> Result<MetricsReport> {
    run_experiment_detailed(dataset, config, jobs).map(|(report, _)| report)
}

/// [`run_experiment`] that also returns the trained parameters.
pub fn run_experiment_detailed(
    dataset: &SalesDataset,
    config: &ExperimentConfig,
    jobs: usize,
) -> Result<(MetricsReport, Vec<TrainedUnit>)> {
    config.validate()?;
    let pool = worker_pool(jobs)?;
    pool.install(|| {
        let items = prepare_items(dataset, config)?;
        let units: Vec<(usize, u64)> = (0..items.len())
            .flat_map(|k| config.seeds.iter().map(move |&s| (k, s)))
            .collect();
        let outcomes: Vec<UnitOutcome> = units
            .par_iter()
            .map(|&(k, seed)| {
                let model = train_model(&items[k], config, seed)?;
                let (predictions, truth) = evaluate_model(&model, &items[k])?;
                Ok(UnitOutcome {
                    predictions,
                    truth,
                    params: model.params().clone(),
                })
            })
            .collect::<Result<_>>()?;
        let report = assemble(config, &items, &units, &outcomes)?;
        let trained = units
            .iter()
            .zip(outcomes)
            .map(|(&(k, seed), o)| TrainedUnit {
                item: items[k].item,
                seed,
                params: o.params,
            })
            .collect();
        Ok((report, trained))
    })
}

/// Evaluates previously trained parameters without training.
pub fn evaluate_trained(
    dataset: &SalesDataset,
    config: &ExperimentConfig,
    trained: &[TrainedUnit],
    jobs: usize,
) -> Result<MetricsReport> {
    config.validate()?;
    let pool = worker_pool(jobs)?;
    pool.install(|| {
        let items = prepare_items(dataset, config)?;
        let units: Vec<(usize, u64)> = (0..items.len())
            .flat_map(|k| config.seeds.iter().map(move |&s| (k, s)))
            .collect();
        let outcomes: Vec<UnitOutcome> = units
            .par_iter()
            .map(|&(k, seed)| {
                let unit = trained
                    .iter()
                    .find(|u| u.item == items[k].item && u.seed == seed)
                    .ok_or_else(|| Error::Data(format!("no trained model for item {} seed {seed}", items[k].item)))?;
                let mut model = FsstModel::new(config.model, &config.network, 0)?;
                model.params_mut().load_values_from(&unit.params)?;
                let (predictions, truth) = evaluate_model(&model, &items[k])?;
                Ok(UnitOutcome {
                    predictions,
                    truth,
                    params: unit.params.clone(),
                })
            })
            .collect::<Result<_>>()?;
        assemble(config, &items, &units, &outcomes)
    })
}

fn assemble(
    config: &ExperimentConfig,
    items: &[PreparedItem],
    units: &[(usize, u64)],
    outcomes: &[UnitOutcome],
) -> Result<MetricsReport> {
    let hash = config.hash();
    let label = config.label();
    let sparsity = if config.model.uses_graph() {
        Some(items.iter().filter_map(|i| i.sparsity).sum::<f64>() / items.len() as f64)
    } else {
        None
    };
    let fallback_count: usize = items.iter().map(|i| i.fallback_count).sum();

    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut predictions = Vec::new();
        let mut truth = Vec::new();
        for (&(_, s), o) in units.iter().zip(outcomes) {
            if s == seed {
                predictions.extend_from_slice(&o.predictions);
                truth.extend_from_slice(&o.truth);
            }
        }
        let m = compute_metrics(&predictions, &truth)?;
        runs.push(RunRecord {
            config_hash: hash.clone(),
            label: label.clone(),
            seed,
            rmse: m.rmse,
            mae: m.mae,
            mape: m.mape,
            mape_excluded: m.mape_excluded,
            sparsity,
            fallback_count,
        });
    }

    let mut products = Vec::with_capacity(items.len());
    for (k, item) in items.iter().enumerate() {
        let per_seed: Vec<Metrics> = units
            .iter()
            .zip(outcomes)
            .filter(|((i, _), _)| *i == k)
            .map(|(_, o)| compute_metrics(&o.predictions, &o.truth))
            .collect::<Result<_>>()?;
        products.push(ProductMetrics {
            item: item.item,
            rmse: Summary::of(&per_seed.iter().map(|m| m.rmse).collect::<Vec<_>>()),
            mae: Summary::of(&per_seed.iter().map(|m| m.mae).collect::<Vec<_>>()),
            mape: Summary::of(&per_seed.iter().map(|m| m.mape).collect::<Vec<_>>()),
        });
    }

    let column = |f: fn(&RunRecord) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(MetricsReport {
        config: config.clone(),
        config_hash: hash,
        label,
        rmse: column(|r| r.rmse),
        mae: column(|r| r.mae),
        mape: column(|r| r.mape),
        runs,
        sparsity,
        fallback_count,
        products,
        selected_filter_params: items
            .iter()
            .filter_map(|i| i.selected_param.map(|p| (i.item, p)))
            .collect(),
    })
}
