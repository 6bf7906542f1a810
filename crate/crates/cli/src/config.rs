//! `key = value` configuration files (TOML syntax) mapped onto
//! [`ExperimentConfig`].
//!
//! Recognised keys are listed in [`KEYS`]; anything else is rejected by name.

use std::path::Path;

use fsst_core::neural::Activation;
use fsst_core::pipeline::ExperimentConfig;
use fsst_core::{Error, Result};
use toml::Value;

pub const KEYS: &[&str] = &[
    "lookback",
    "train_fraction",
    "seeds",
    "model",
    "graph_kind",
    "filter",
    "alpha",
    "lambda",
    "min_clique",
    "max_clique",
    "mfcf_threshold",
    "cv_folds",
    "select_filter_params",
    "lstm_hidden",
    "gnn_dim",
    "gat_heads",
    "mlp_hidden",
    "gnn_activation",
    "learning_rate",
    "epochs",
    "patience",
    "batch_size",
    "validation_fraction",
];

pub fn load(path: &Path, config: &mut ExperimentConfig) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parameter(format!("cannot read config file {}: {e}", path.display())))?;
    apply(&text, config)
}

/// Applies every key of `text` to `config`.
pub fn apply(text: &str, config: &mut ExperimentConfig) -> Result<()> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parameter(format!("config file: {}", e.message())))?;
    for (key, value) in &table {
        set(config, key, value)?;
    }
    Ok(())
}

fn bad(key: &str, expected: &str, value: &Value) -> Error {
    Error::Parameter(format!("config key `{key}` expects {expected}, got `{value}`"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_integer()
        .and_then(|i| usize::try_from(i).ok())
        .ok_or_else(|| bad(key, "a non-negative integer", v))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| bad(key, "a number", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, "a string", v))
}

pub fn parse_activation(s: &str) -> Result<Activation> {
    match s.to_ascii_lowercase().as_str() {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        "none" | "linear" => Ok(Activation::None),
        other => Err(Error::Parameter(format!("unknown activation `{other}`"))),
    }
}

fn set(c: &mut ExperimentConfig, key: &str, v: &Value) -> Result<()> {
    match key {
        "lookback" => c.lookback = as_usize(key, v)?,
        "train_fraction" => c.train_fraction = as_f64(key, v)?,
        "seeds" => {
            let list = v.as_array().ok_or_else(|| bad(key, "a list of integers", v))?;
            c.seeds = list
                .iter()
                .map(|s| {
                    s.as_integer()
                        .and_then(|i| u64::try_from(i).ok())
                        .ok_or_else(|| bad(key, "a list of integers", v))
                })
                .collect::<Result<_>>()?;
        }
        "model" => c.model = as_str(key, v)?.parse()?,
        "graph_kind" => c.graph_kind = as_str(key, v)?.parse()?,
        "filter" => c.filter.method = as_str(key, v)?.parse()?,
        "alpha" => c.filter.alpha = as_f64(key, v)?,
        "lambda" => c.filter.lambda = as_f64(key, v)?,
        "min_clique" => c.filter.min_clique = as_usize(key, v)?,
        "max_clique" => c.filter.max_clique = as_usize(key, v)?,
        "mfcf_threshold" => c.filter.mfcf_gain_threshold = as_f64(key, v)?,
        "cv_folds" => c.filter.cv_folds = as_usize(key, v)?,
        "select_filter_params" => c.select_filter_params = v.as_bool().ok_or_else(|| bad(key, "true or false", v))?,
        "lstm_hidden" => c.network.lstm_hidden = as_usize(key, v)?,
        "gnn_dim" => c.network.gnn_dim = as_usize(key, v)?,
        "gat_heads" => c.network.gat_heads = as_usize(key, v)?,
        "mlp_hidden" => c.network.mlp_hidden = as_usize(key, v)?,
        "gnn_activation" => c.network.gnn_activation = parse_activation(as_str(key, v)?)?,
        "learning_rate" => c.network.learning_rate = as_f64(key, v)?,
        "epochs" => c.network.epochs = as_usize(key, v)?,
        "patience" => c.network.patience = as_usize(key, v)?,
        "batch_size" => c.network.batch_size = as_usize(key, v)?,
        "validation_fraction" => c.network.validation_fraction = as_f64(key, v)?,
        unknown => {
            return Err(Error::Parameter(format!(
                "unknown config key `{unknown}`; known keys: {}",
                KEYS.join(", ")
            )))
        }
    }
    Ok(())
}
