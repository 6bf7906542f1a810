//! Filtered sparse spatial-temporal graph neural networks for multivariate
//! time-series forecasting.
//!
//! The crate is organised bottom-up:
//!
//! - [`matrix`]: panels, correlation and precision matrices, Cholesky inversion
//! - [`filtering`]: shrinkage, graphical lasso and clique-forest (TMFG) filters
//! - [`graph`]: conversion of filtered matrices into GNN input graphs
//! - [`neural`]: a small reverse-mode autodiff tape and the LSTM, GCN, GAT
//!   and MLP layers built on it
//! - [`pipeline`]: data ingestion and synthesis, training, metrics and sweeps

pub mod error;
pub mod filtering;
pub mod graph;
pub mod matrix;
pub mod neural;
pub mod pipeline;

pub use error::{Error, ErrorClass, Result};
