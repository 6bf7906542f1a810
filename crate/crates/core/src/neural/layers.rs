//! Network layers. Each layer owns [`ParamId`]s into a shared
//! [`ParamStore`] and builds its forward pass on a [`Tape`] through the
//! store's [`Bound`] handles.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, ParamId, ParamStore};
use super::tape::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::FilteredGraph;

/// Negative slope of the attention LeakyReLU.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Tensor) -> Tensor {
        match self {
            Self::Relu => tape.relu(x),
            Self::Tanh => tape.tanh(x),
            Self::None => x,
        }
    }
}

fn check_features(tape: &Tape, graph: &FilteredGraph, features: Tensor, in_dim: usize, layer: &str) -> Result<()> {
    let (n, f) = tape.shape(features);
    if n != graph.n() {
        return Err(Error::Shape(format!(
            "{layer}: {n} feature rows for a {}-node graph",
            graph.n()
        )));
    }
    if f != in_dim {
        return Err(Error::Shape(format!(
            "{layer}: feature width {f}, layer expects {in_dim}"
        )));
    }
    Ok(())
}

/// Correlation-weighted graph convolution `h'_i = φ(Σ_j C_ij · h_j W)`.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_xavier(&format!("{name}.weight"), in_dim, out_dim, rng);
        Self {
            weight,
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, graph: &FilteredGraph, features: Tensor) -> Result<Tensor> {
        check_features(tape, graph, features, self.in_dim, "gcn")?;
        let transformed = tape.matmul(features, params.get(self.weight));
        let adjacency = tape.constant(graph.weights().clone());
        let aggregated = tape.matmul(adjacency, transformed);
        Ok(self.activation.apply(tape, aggregated))
    }
}

/// One attention head: a projection `W` (in × d) and the attention vector
/// stored as a d × 2 matrix whose columns are the source and neighbor halves.
#[derive(Debug, Clone)]
pub struct GatHead {
    pub weight: ParamId,
    pub attention: ParamId,
}

/// Multi-head masked graph attention with head outputs averaged.
///
/// Only the graph's mask is read; edge weights play no part.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub in_dim: usize,
    pub head_dim: usize,
    pub leaky_slope: f64,
    pub activation: Activation,
}

impl GatLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        head_dim: usize,
        heads: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Parameter("attention layer needs at least one head".into()));
        }
        let heads = (0..heads)
            .map(|k| GatHead {
                weight: store.add_xavier(&format!("{name}.head{k}.weight"), in_dim, head_dim, rng),
                attention: store.add_xavier(&format!("{name}.head{k}.attention"), head_dim, 2, rng),
            })
            .collect();
        Ok(Self {
            heads,
            in_dim,
            head_dim,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            activation,
        })
    }

    fn mask(graph: &FilteredGraph) -> Result<&Array2<bool>> {
        let mask = graph.mask();
        if let Some(i) = mask.rows().into_iter().position(|r| !r.iter().any(|&m| m)) {
            return Err(Error::Data(format!(
                "node {i} has no neighbors, attention is undefined"
            )));
        }
        Ok(mask)
    }

    fn head_attention(
        &self,
        tape: &mut Tape,
        params: &Bound,
        head: &GatHead,
        features: Tensor,
        mask: &Array2<bool>,
    ) -> (Tensor, Tensor) {
        let z = tape.matmul(features, params.get(head.weight));
        let scores = tape.matmul(z, params.get(head.attention));
        let source = tape.slice_cols(scores, 0, 1);
        let neighbor = tape.slice_cols(scores, 1, 2);
        let logits = tape.outer_sum(source, neighbor);
        let logits = tape.leaky_relu(logits, self.leaky_slope);
        (tape.masked_softmax(logits, mask), z)
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, graph: &FilteredGraph, features: Tensor) -> Result<Tensor> {
        check_features(tape, graph, features, self.in_dim, "gat")?;
        let mask = Self::mask(graph)?;
        let mut total: Option<Tensor> = None;
        for head in &self.heads {
            let (alpha, z) = self.head_attention(tape, params, head, features, mask);
            let out = tape.matmul(alpha, z);
            total = Some(match total {
                Some(t) => tape.add(t, out),
                None => out,
            });
        }
        let mean = tape.scale(total.expect("at least one head"), 1.0 / self.heads.len() as f64);
        Ok(self.activation.apply(tape, mean))
    }

    /// Attention coefficients of every head (rows: nodes, columns: neighbors).
    pub fn attention(
        &self,
        params: &ParamStore,
        graph: &FilteredGraph,
        features: &Array2<f64>,
    ) -> Result<Vec<Array2<f64>>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(features.clone());
        check_features(&tape, graph, x, self.in_dim, "gat")?;
        let mask = Self::mask(graph)?;
        Ok(self
            .heads
            .iter()
            .map(|head| {
                let (alpha, _) = self.head_attention(&mut tape, &bound, head, x, mask);
                tape.value(alpha).clone()
            })
            .collect())
    }
}

/// LSTM cell with the four gates fused into one matrix, gate order
/// input, forget, candidate, output. Rows of the input are independent
/// sequences sharing the weights.
#[derive(Debug, Clone)]
pub struct LstmCell {
    /// `in × 4H`
    pub input_weight: ParamId,
    /// `H × 4H`
    pub hidden_weight: ParamId,
    /// `1 × 4H`
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let gates = 4 * hidden_dim;
        Self {
            input_weight: store.add_xavier(&format!("{name}.input_weight"), input_dim, gates, rng),
            hidden_weight: store.add_xavier(&format!("{name}.hidden_weight"), hidden_dim, gates, rng),
            bias: store.add_zeros(&format!("{name}.bias"), 1, gates),
            input_dim,
            hidden_dim,
        }
    }

    /// One step; returns the new `(hidden, cell)`.
    pub fn step(&self, tape: &mut Tape, params: &Bound, x: Tensor, hidden: Tensor, cell: Tensor) -> (Tensor, Tensor) {
        let from_input = tape.matmul(x, params.get(self.input_weight));
        let from_hidden = tape.matmul(hidden, params.get(self.hidden_weight));
        let gates = tape.add(from_input, from_hidden);
        let gates = tape.add_row(gates, params.get(self.bias));
        let h = self.hidden_dim;
        let i = tape.slice_cols(gates, 0, h);
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(gates, h, 2 * h);
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(gates, 2 * h, 3 * h);
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * h, 4 * h);
        let o = tape.sigmoid(o);
        let kept = tape.mul(f, cell);
        let written = tape.mul(i, g);
        let cell = tape.add(kept, written);
        let squashed = tape.tanh(cell);
        (tape.mul(o, squashed), cell)
    }

    fn check_steps(&self, shapes: impl Iterator<Item = (usize, usize)>) -> Result<usize> {
        let mut batch = None;
        for shape in shapes {
            let b = *batch.get_or_insert(shape.0);
            if shape != (b, self.input_dim) {
                return Err(Error::Shape(format!(
                    "lstm step has shape {shape:?}, expected ({b}, {})",
                    self.input_dim
                )));
            }
        }
        batch.ok_or_else(|| Error::Shape("lstm needs at least one time step".into()))
    }

    /// Runs the recurrence from zero state over `steps` (each `B × in`) and
    /// returns the final hidden state (`B × H`). One fused tape node.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, steps: &[Array2<f64>]) -> Result<Tensor> {
        self.check_steps(steps.iter().map(|s| s.dim()))?;
        Ok(tape.lstm(
            steps,
            params.get(self.input_weight),
            params.get(self.hidden_weight),
            params.get(self.bias),
        ))
    }

    /// Same recurrence as [`LstmCell::forward`] built from [`LstmCell::step`]
    /// with elementary tape ops. Much slower; kept as a cross-check.
    pub fn forward_stepwise(&self, tape: &mut Tape, params: &Bound, steps: &[Tensor]) -> Result<Tensor> {
        let batch = self.check_steps(steps.iter().map(|&s| tape.shape(s)))?;
        let mut hidden = tape.constant(Array2::zeros((batch, self.hidden_dim)));
        let mut cell = tape.constant(Array2::zeros((batch, self.hidden_dim)));
        for &x in steps {
            (hidden, cell) = self.step(tape, params, x, hidden, cell);
        }
        Ok(hidden)
    }

    /// Treats each column of a `T × N` window as a scalar sequence (input
    /// dimension 1) and returns the `N × H` final hidden states.
    pub fn forward_window(&self, tape: &mut Tape, params: &Bound, window: ArrayView2<'_, f64>) -> Result<Tensor> {
        if self.input_dim != 1 {
            return Err(Error::Shape(format!(
                "window input needs input dimension 1, cell has {}",
                self.input_dim
            )));
        }
        let steps: Vec<Array2<f64>> = window
            .rows()
            .into_iter()
            .map(|row| row.to_owned().insert_axis(Axis(1)))
            .collect();
        self.forward(tape, params, &steps)
    }
}

/// Readout MLP over the concatenated branch outputs, one scalar per node.
/// With `hidden` absent it is a single linear map.
#[derive(Debug, Clone)]
pub struct Readout {
    pub hidden: Option<(ParamId, ParamId)>,
    pub output_weight: ParamId,
    pub output_bias: ParamId,
    pub input_dim: usize,
}

impl Readout {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let (hidden, last_in) = match hidden_dim {
            Some(m) => {
                let w = store.add_xavier(&format!("{name}.hidden_weight"), input_dim, m, rng);
                let b = store.add_zeros(&format!("{name}.hidden_bias"), 1, m);
                (Some((w, b)), m)
            }
            None => (None, input_dim),
        };
        Self {
            hidden,
            output_weight: store.add_xavier(&format!("{name}.output_weight"), last_in, 1, rng),
            output_bias: store.add_zeros(&format!("{name}.output_bias"), 1, 1),
            input_dim,
        }
    }

    /// Concatenates `temporal` and `spatial` (when given) column-wise and maps
    /// each row to a prediction (`N × 1`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bound,
        temporal: Tensor,
        spatial: Option<Tensor>,
    ) -> Result<Tensor> {
        let x = match spatial {
            Some(s) => {
                if tape.shape(s).0 != tape.shape(temporal).0 {
                    return Err(Error::Shape(format!(
                        "readout: temporal has {} rows, spatial {}",
                        tape.shape(temporal).0,
                        tape.shape(s).0
                    )));
                }
                tape.concat_cols(&[temporal, s])
            }
            None => temporal,
        };
        if tape.shape(x).1 != self.input_dim {
            return Err(Error::Shape(format!(
                "readout: input width {}, expected {}",
                tape.shape(x).1,
                self.input_dim
            )));
        }
        let x = match self.hidden {
            Some((w, b)) => {
                let z = tape.matmul(x, params.get(w));
                let z = tape.add_row(z, params.get(b));
                tape.relu(z)
            }
            None => x,
        };
        let y = tape.matmul(x, params.get(self.output_weight));
        Ok(tape.add_row(y, params.get(self.output_bias)))
    }
}
