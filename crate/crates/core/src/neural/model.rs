//! The spatial-temporal forecaster: an LSTM over each series' window, an
//! optional graph layer over the four-moment node features, and a readout
//! MLP predicting the next value of every series.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FEATURE_DIM;
use super::layers::{Activation, GatLayer, GcnLayer, LstmCell, Readout};
use super::params::{Bound, ParamStore};
use super::tape::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::FilteredGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Lstm,
    FsstGcn,
    FsstGat,
}

impl ModelKind {
    pub fn uses_graph(self) -> bool {
        !matches!(self, Self::Lstm)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Lstm => "LSTM",
            Self::FsstGcn => "FSST-GNN (GCN)",
            Self::FsstGat => "FSST-GNN (GAT)",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "lstm" => Ok(Self::Lstm),
            "fsst-gcn" | "gcn" => Ok(Self::FsstGcn),
            "fsst-gat" | "gat" => Ok(Self::FsstGat),
            other => Err(Error::Parameter(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lstm => "lstm",
            Self::FsstGcn => "fsst-gcn",
            Self::FsstGat => "fsst-gat",
        })
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub lstm_hidden: usize,
    /// Output width of the graph layer (per head for attention).
    pub gnn_dim: usize,
    pub gat_heads: usize,
    pub mlp_hidden: usize,
    pub gnn_activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    /// Trailing share of the training segment held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            lstm_hidden: 32,
            gnn_dim: 16,
            gat_heads: 4,
            mlp_hidden: 32,
            gnn_activation: Activation::Relu,
            learning_rate: 1e-3,
            epochs: 100,
            patience: 10,
            batch_size: 16,
            validation_fraction: 0.1,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lstm hidden size", self.lstm_hidden),
            ("gnn dimension", self.gnn_dim),
            ("attention heads", self.gat_heads),
            ("mlp hidden size", self.mlp_hidden),
            ("epochs", self.epochs),
            ("batch size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Spatial {
    None,
    Gcn(GcnLayer),
    Gat(GatLayer),
}

#[derive(Debug, Clone)]
pub struct FsstModel {
    kind: ModelKind,
    config: NetworkConfig,
    params: ParamStore,
    lstm: LstmCell,
    spatial: Spatial,
    readout: Readout,
}

impl FsstModel {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(kind: ModelKind, config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let lstm = LstmCell::new(&mut params, "lstm", 1, config.lstm_hidden, &mut rng);
        let (spatial, spatial_dim) = match kind {
            ModelKind::Lstm => (Spatial::None, 0),
            ModelKind::FsstGcn => (
                Spatial::Gcn(GcnLayer::new(
                    &mut params,
                    "gcn",
                    FEATURE_DIM,
                    config.gnn_dim,
                    config.gnn_activation,
                    &mut rng,
                )),
                config.gnn_dim,
            ),
            ModelKind::FsstGat => (
                Spatial::Gat(GatLayer::new(
                    &mut params,
                    "gat",
                    FEATURE_DIM,
                    config.gnn_dim,
                    config.gat_heads,
                    config.gnn_activation,
                    &mut rng,
                )?),
                config.gnn_dim,
            ),
        };
        let readout = Readout::new(
            &mut params,
            "readout",
            config.lstm_hidden + spatial_dim,
            Some(config.mlp_hidden),
            &mut rng,
        );
        Ok(Self {
            kind,
            config: config.clone(),
            params,
            lstm,
            spatial,
            readout,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Builds the forward pass for one window (`T × N`, columns are series)
    /// and returns the `N × 1` predictions. Graph models need the graph and
    /// the `N × 4` node features; the plain LSTM ignores them.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        window: ArrayView2<'_, f64>,
        spatial_input: Option<(&FilteredGraph, &Array2<f64>)>,
    ) -> Result<Tensor> {
        let temporal = self.lstm.forward_window(tape, bound, window)?;
        let spatial = match (&self.spatial, spatial_input) {
            (Spatial::None, _) => None,
            (_, None) => {
                return Err(Error::Parameter(format!(
                    "{} needs a graph and node features",
                    self.kind
                )))
            }
            (Spatial::Gcn(layer), Some((graph, features))) => {
                let x = tape.constant(features.clone());
                Some(layer.forward(tape, bound, graph, x)?)
            }
            (Spatial::Gat(layer), Some((graph, features))) => {
                let x = tape.constant(features.clone());
                Some(layer.forward(tape, bound, graph, x)?)
            }
        };
        if let Some(s) = spatial {
            if tape.shape(s).0 != window.ncols() {
                return Err(Error::Shape(format!(
                    "graph has {} nodes, window {} series",
                    tape.shape(s).0,
                    window.ncols()
                )));
            }
        }
        self.readout.forward(tape, bound, temporal, spatial)
    }

    /// Forward pass on a throwaway tape, returning the prediction column.
    pub fn predict(
        &self,
        window: ArrayView2<'_, f64>,
        spatial_input: Option<(&FilteredGraph, &Array2<f64>)>,
    ) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, window, spatial_input)?;
        Ok(tape.value(out).clone())
    }
}
