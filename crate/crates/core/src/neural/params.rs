//! Named parameter storage, the Adam optimizer and plain-text checkpoints.
//!
//! Checkpoint format (version 1):
//!
//! ```text
//! fsst-checkpoint v1
//! <parameter count>
//! <name> <rows> <cols>
//! <rows lines of cols whitespace-separated values>
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a saved
//! and reloaded store is bit-identical.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;

use super::tape::{Tape, Tensor};
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &str = "fsst-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique and free of whitespace.
    pub fn add(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        assert!(
            !name.is_empty() && !name.contains(char::is_whitespace),
            "bad parameter name `{name}`"
        );
        assert!(!self.names.iter().any(|n| n == name), "duplicate parameter `{name}`");
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Registers a `rows × cols` parameter drawn uniformly from
    /// `±√(6 / (rows + cols))`.
    pub fn add_xavier<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Places every parameter on `tape` as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            tensors: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }
}

/// Tape handles for the parameters of a [`ParamStore`], valid for one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Tensor {
        self.tensors[id.0]
    }

    /// Gradients after `tape.backward`, zero for parameters the loss does not
    /// depend on.
    pub fn grads(&self, tape: &Tape) -> Vec<Array2<f64>> {
        self.tensors
            .iter()
            .map(|&t| tape.grad(t).cloned().unwrap_or_else(|| Array2::zeros(tape.shape(t))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    steps: i32,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<_> = store.values.iter().map(|v| Array2::zeros(v.dim())).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One bias-corrected Adam update. Nothing is modified when any gradient
    /// is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array2<f64>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.dim() != store.values[i].dim() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} for parameter `{}`",
                    g.dim(),
                    store.names[i]
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    param: store.names[i].clone(),
                });
            }
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.steps += 1;
        let c1 = 1.0 - beta1.powi(self.steps);
        let c2 = 1.0 - beta2.powi(self.steps);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let p = &mut store.values[i];
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            });
        }
        Ok(())
    }
}

pub fn save_checkpoint(store: &ParamStore) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "{}", store.len());
    for (name, value) in store.names.iter().zip(&store.values) {
        let _ = writeln!(out, "{name} {} {}", value.nrows(), value.ncols());
        for row in value.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}

/// Parses a checkpoint into a fresh store.
pub fn load_checkpoint(text: &str) -> Result<ParamStore> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("unexpected end of checkpoint, expected {what}"),
        })
    };
    let (line, magic) = next("header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            line,
            message: format!("expected `{CHECKPOINT_MAGIC}`, found `{magic}`"),
        });
    }
    let (line, count) = next("parameter count")?;
    let count: usize = count.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad parameter count `{count}`"),
    })?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let (line, header) = next("parameter header")?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad = || Error::Parse {
            line,
            message: format!("bad parameter header `{header}`"),
        };
        if fields.len() != 3 {
            return Err(bad());
        }
        let rows: usize = fields[1].parse().map_err(|_| bad())?;
        let cols: usize = fields[2].parse().map_err(|_| bad())?;
        if store.find(fields[0]).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate parameter `{}`", fields[0]),
            });
        }
        let mut value = Array2::zeros((rows, cols));
        for r in 0..rows {
            let (line, row) = next("parameter row")?;
            let parsed: std::result::Result<Vec<f64>, _> = row.split_whitespace().map(str::parse).collect();
            let parsed = parsed.map_err(|e| Error::Parse {
                line,
                message: format!("bad value: {e}"),
            })?;
            if parsed.len() != cols {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {cols} values, found {}", parsed.len()),
                });
            }
            for (c, v) in parsed.into_iter().enumerate() {
                value[[r, c]] = v;
            }
        }
        store.add(fields[0], value);
    }
    Ok(store)
}

impl ParamStore {
    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Parameter(
                "checkpoint parameter names do not match the model".into(),
            ));
        }
        for (i, v) in other.values.iter().enumerate() {
            if v.dim() != self.values[i].dim() {
                return Err(Error::Shape(format!(
                    "checkpoint parameter `{}` has shape {:?}, model expects {:?}",
                    self.names[i],
                    v.dim(),
                    self.values[i].dim()
                )));
            }
        }
        self.values.clone_from(&other.values);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0, -2.0]]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[Array2::zeros((1, 2))]).unwrap();
        assert_eq!(store.get(id), &array![[1.0, -2.0]]);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.0, 0.0]]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        for _ in 0..50 {
            adam.step(&mut store, &[array![[3.0, -0.5]]]).unwrap();
        }
        assert!(store.get(id)[[0, 0]] < 0.0);
        assert!(store.get(id)[[0, 1]] > 0.0);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut store = ParamStore::new();
        store.add("a", array![[1.0]]);
        store.add("lstm.w_h", array![[1.0]]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        let err = adam.step(&mut store, &[array![[0.1]], array![[f64::NAN]]]).unwrap_err();
        match err {
            Error::Numeric { param } => assert_eq!(param, "lstm.w_h"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.get(ParamId(0)), &array![[1.0]]);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add_xavier("gcn.weight", 4, 16, &mut rng);
        store.add_zeros("readout.bias", 1, 1);
        let text = save_checkpoint(&store);
        assert!(text.starts_with("fsst-checkpoint v1\n2\ngcn.weight 4 16\n"));
        let loaded = load_checkpoint(&text).unwrap();
        assert_eq!(loaded, store);
    }

    #[test]
    fn checkpoint_errors_carry_line_numbers() {
        let err = load_checkpoint("fsst-checkpoint v1\n1\nw 1 2\n1.0 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
        assert!(load_checkpoint("something else\n").is_err());
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.add_xavier("w", 10, 14, &mut rng);
        let bound = 0.5;
        assert!(store.get(id).iter().all(|v| v.abs() <= bound));
    }
}
