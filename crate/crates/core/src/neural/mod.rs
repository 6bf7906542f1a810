//! Reverse-mode autodiff and the network components of the forecaster:
//! LSTM, graph convolution, graph attention and the MLP readout.

pub mod features;
pub mod layers;
pub mod model;
pub mod params;
pub mod tape;

pub use features::node_features;
pub use layers::{Activation, GatLayer, GcnLayer, LstmCell, Readout};
pub use model::{FsstModel, ModelKind, NetworkConfig};
pub use params::{load_checkpoint, save_checkpoint, Adam, AdamConfig, Bound, ParamId, ParamStore};
pub use tape::{Tape, Tensor};
