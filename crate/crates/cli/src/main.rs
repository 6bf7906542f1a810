//! `fsst`: synthesize data, inspect filtered graphs, train, evaluate and
//! sweep spatial-temporal forecasters from the command line.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsst_core::filtering::{apply_filter, FilterConfig};
use fsst_core::matrix::{correlation_of, format_matrix, is_positive_definite};
use fsst_core::neural::{load_checkpoint, save_checkpoint, ModelKind};
use fsst_core::pipeline::{
    comparison_table, evaluate_trained, ingest_csv, product_table, records_jsonl, run_experiment_detailed, sweep,
    synthesize_dataset, ExperimentConfig, MetricsReport, SalesDataset, SweepAxis, TrainedUnit,
};
use fsst_core::{Error, ErrorClass, Result};

#[derive(Parser, Debug)]
#[command(name = "fsst", version, about = "Filtered sparse spatial-temporal GNN forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic sales CSV.
    GenData(GenDataArgs),
    /// Filter the correlation of one item's stores over a window.
    Filter(FilterArgs),
    /// Train and evaluate a configuration over every item and seed.
    Train(TrainArgs),
    /// Evaluate checkpoints written by `train --out`.
    Evaluate(EvaluateArgs),
    /// Run one configuration per value along an axis.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    stores: usize,
    #[arg(long, default_value_t = 5)]
    items: usize,
    #[arg(long, default_value_t = 730)]
    days: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Sales CSV (date,store,item,sales).
    #[arg(long)]
    data: PathBuf,
    /// Item id [default: first item in the file]
    #[arg(long)]
    item: Option<u32>,
    /// First day of the window (0-based).
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Window length in days [default: through the last day]
    #[arg(long)]
    window: Option<usize>,
    /// empirical, shrinkage, glasso or mfcf.
    #[arg(long, default_value = "glasso")]
    method: String,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 4)]
    min_clique: usize,
    #[arg(long, default_value_t = 4)]
    max_clique: usize,
    #[arg(long, default_value_t = 0.0)]
    mfcf_threshold: f64,
    /// Directory for correlation.txt and precision.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Experiment flags; each one overrides the config file, which overrides the
/// built-in default shown.
#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    /// Sales CSV (date,store,item,sales).
    #[arg(long)]
    data: PathBuf,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use only the first N items [default: all]
    #[arg(long)]
    items: Option<usize>,
    /// Worker threads, 0 for one per core; 1 is fully serial.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// lstm, fsst-gcn or fsst-gat [default: fsst-gcn]
    #[arg(long)]
    model: Option<String>,
    /// inverse-correlation, correlation, ones, zeros or identity [default: inverse-correlation]
    #[arg(long)]
    graph_kind: Option<String>,
    /// empirical, shrinkage, glasso or mfcf [default: glasso]
    #[arg(long)]
    filter: Option<String>,
    /// Shrinkage coefficient [default: 0.1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Graphical lasso penalty [default: 0.1]
    #[arg(long)]
    lambda: Option<f64>,
    /// [default: 4]
    #[arg(long)]
    min_clique: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    max_clique: Option<usize>,
    /// MFCF gain threshold [default: 0]
    #[arg(long)]
    mfcf_threshold: Option<f64>,
    /// [default: 5]
    #[arg(long)]
    cv_folds: Option<usize>,
    /// Choose alpha or lambda by cross-validation per item [default: false]
    #[arg(long)]
    select_filter_params: bool,
    /// Window length in days [default: 14]
    #[arg(long)]
    lookback: Option<usize>,
    /// Share of days used for training [default: 0.8]
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Comma-separated run seeds [default: 1,2,3,4,5,6,7,8,9,10]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// [default: 32]
    #[arg(long)]
    lstm_hidden: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    gnn_dim: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    gat_heads: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    mlp_hidden: Option<usize>,
    /// relu, tanh or none [default: relu]
    #[arg(long)]
    gnn_activation: Option<String>,
    /// [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    patience: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    validation_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Directory for records.jsonl, report.json, table.txt and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Directory written by `train --out`.
    #[arg(long)]
    checkpoints: PathBuf,
    /// Directory for records.jsonl, report.json and table.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// filter-method, sparsity or graph-kind.
    #[arg(long)]
    axis: String,
    /// Comma-separated values along the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Directory for records.jsonl, sweep.json and table.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(&a),
        Command::Filter(a) => filter(&a),
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Sweep(a) => run_sweep(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let dataset = synthesize_dataset(a.stores, a.items, a.days, a.seed)?;
    let file = fs::File::create(&a.out)?;
    dataset.write_csv(std::io::BufWriter::new(file))?;
    println!("wrote {} rows to {}", dataset.record_count(), a.out.display());
    Ok(())
}

fn filter(a: &FilterArgs) -> Result<()> {
    let config = FilterConfig {
        method: a.method.parse()?,
        alpha: a.alpha,
        lambda: a.lambda,
        min_clique: a.min_clique,
        max_clique: a.max_clique,
        mfcf_gain_threshold: a.mfcf_threshold,
        ..FilterConfig::default()
    };
    config.validate()?;
    let dataset = ingest_csv(&a.data)?;
    let index = match a.item {
        None => 0,
        Some(id) => dataset
            .items()
            .iter()
            .position(|&i| i == id)
            .ok_or_else(|| Error::Data(format!("item {id} is not in {}", a.data.display())))?,
    };
    let sales = dataset.item_sales(index);
    let end = a.window.map_or(sales.nrows(), |w| a.start + w);
    if a.start >= end || end > sales.nrows() {
        return Err(Error::Range(format!(
            "window {}..{end} does not fit {} days",
            a.start,
            sales.nrows()
        )));
    }
    let corr = correlation_of(sales.slice(ndarray::s![a.start..end, ..]));
    let result = apply_filter(&corr, &config)?;
    let pd = is_positive_definite(result.precision.entries())?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("correlation.txt"), format_matrix(result.correlation.entries()))?;
        fs::write(dir.join("precision.txt"), format_matrix(result.precision.entries()))?;
    }
    println!("method={}", result.method);
    println!("sparsity={:.3}", result.sparsity);
    println!("edges={}", result.precision.pattern().len());
    println!("positive_definite={pd}");
    if result.jitter > 0.0 {
        println!("jitter={:e}", result.jitter);
    }
    Ok(())
}

/// Defaults, then the config file, then flags.
fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    if let Some(path) = &a.config {
        config::load(path, &mut c)?;
    }
    if let Some(v) = &a.model {
        c.model = v.parse::<ModelKind>()?;
    }
    if let Some(v) = &a.graph_kind {
        c.graph_kind = v.parse()?;
    }
    if let Some(v) = &a.filter {
        c.filter.method = v.parse()?;
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = &a.$flag { c.$($field).+ = v.clone(); })*
        };
    }
    set!(
        alpha => filter.alpha,
        lambda => filter.lambda,
        min_clique => filter.min_clique,
        max_clique => filter.max_clique,
        mfcf_threshold => filter.mfcf_gain_threshold,
        cv_folds => filter.cv_folds,
        lookback => lookback,
        train_fraction => train_fraction,
        seeds => seeds,
        lstm_hidden => network.lstm_hidden,
        gnn_dim => network.gnn_dim,
        gat_heads => network.gat_heads,
        mlp_hidden => network.mlp_hidden,
        learning_rate => network.learning_rate,
        epochs => network.epochs,
        patience => network.patience,
        batch_size => network.batch_size,
        validation_fraction => network.validation_fraction,
    );
    if let Some(v) = &a.gnn_activation {
        c.network.gnn_activation = config::parse_activation(v)?;
    }
    if a.select_filter_params {
        c.select_filter_params = true;
    }
    c.validate()?;
    Ok(c)
}

fn load_dataset(a: &ExperimentArgs) -> Result<SalesDataset> {
    let dataset = ingest_csv(&a.data)?;
    match a.items {
        Some(n) => dataset.with_items(n),
        None => Ok(dataset),
    }
}

fn checkpoint_path(dir: &Path, item: u32, seed: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("item{item}_seed{seed}.txt"))
}

fn write_report(dir: &Path, report: &MetricsReport, table: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("records.jsonl"), records_jsonl(&report.runs))?;
    let json = serde_json::to_string_pretty(report).expect("reports serialize");
    fs::write(dir.join("report.json"), json + "\n")?;
    fs::write(dir.join("table.txt"), table)?;
    Ok(())
}

fn print_report(report: &MetricsReport) -> String {
    let mut table = comparison_table(std::slice::from_ref(report));
    table.push('\n');
    table.push_str(&product_table(report));
    print!("{table}");
    if report.fallback_count > 0 {
        println!("filter fallbacks: {}", report.fallback_count);
    }
    table
}

fn train(a: &TrainArgs) -> Result<()> {
    let config = experiment_config(&a.experiment)?;
    let dataset = load_dataset(&a.experiment)?;
    let (report, trained) = run_experiment_detailed(&dataset, &config, a.experiment.jobs)?;
    let table = print_report(&report);
    if let Some(dir) = &a.out {
        write_report(dir, &report, &table)?;
        fs::create_dir_all(dir.join("checkpoints"))?;
        for unit in &trained {
            fs::write(
                checkpoint_path(dir, unit.item, unit.seed),
                save_checkpoint(&unit.params),
            )?;
        }
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let config = experiment_config(&a.experiment)?;
    let dataset = load_dataset(&a.experiment)?;
    let mut trained = Vec::new();
    for &item in dataset.items() {
        for &seed in &config.seeds {
            let path = checkpoint_path(&a.checkpoints, item, seed);
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
            trained.push(TrainedUnit {
                item,
                seed,
                params: load_checkpoint(&text)?,
            });
        }
    }
    let report = evaluate_trained(&dataset, &config, &trained, a.experiment.jobs)?;
    let table = print_report(&report);
    if let Some(dir) = &a.out {
        write_report(dir, &report, &table)?;
    }
    Ok(())
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let axis: SweepAxis = a.axis.parse()?;
    let config = experiment_config(&a.experiment)?;
    let dataset = load_dataset(&a.experiment)?;
    let table = sweep(&dataset, &config, axis, &a.values, a.experiment.jobs)?;
    let text = table.format();
    print!("{text}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("records.jsonl"), records_jsonl(table.records()))?;
        let json = serde_json::to_string_pretty(&table).expect("sweeps serialize");
        fs::write(dir.join("sweep.json"), json + "\n")?;
        fs::write(dir.join("table.txt"), &text)?;
    }
    if table.failed_count() > 0 {
        eprintln!("{} of {} sweep values failed", table.failed_count(), table.rows.len());
    }
    Ok(())
}
