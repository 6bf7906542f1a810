//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records every operation as a node holding its value. Nodes are
//! appended in evaluation order, so index order is a topological order and
//! [`Tape::backward`] is a single reverse sweep. [`Tensor`] is a lightweight
//! handle (a node index) into the tape that created it.
//!
//! Shape mismatches inside tape operations are programming errors and panic;
//! layers validate user-facing shapes before touching the tape.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tensor {
    id: usize,
}

impl Tensor {
    pub fn node_id(self) -> usize {
        self.id
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Adds a 1×C row to every row.
    AddRow(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize, usize),
    /// `out[i][j] = u[i] + v[j]` for N×1 columns `u`, `v`.
    OuterSum(usize, usize),
    MaskedSoftmax(usize),
    /// Whole LSTM recurrence; the cache keeps what the backward sweep needs.
    Lstm(Box<LstmCache>),
    Sum(usize),
    Mean(usize),
    Square(usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Tensor {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Tensor {
            id: self.nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Leaf that gradients flow into.
    pub fn param(&mut self, value: Array2<f64>) -> Tensor {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&mut self, value: Array2<f64>) -> Tensor {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, t: Tensor) -> &Array2<f64> {
        &self.nodes[t.id].value
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.nodes[t.id].value.dim()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Gradient populated by the last [`Tape::backward`], if the node received
    /// one.
    pub fn grad(&self, t: Tensor) -> Option<&Array2<f64>> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let v = self.value(a).dot(self.value(b));
        let rg = self.needs(&[a.id, b.id]);
        self.push(v, Op::MatMul(a.id, b.id), rg)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        let rg = self.needs(&[a.id, b.id]);
        self.push(v, Op::Add(a.id, b.id), rg)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        let rg = self.needs(&[a.id, b.id]);
        self.push(v, Op::Sub(a.id, b.id), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        let rg = self.needs(&[a.id, b.id]);
        self.push(v, Op::Mul(a.id, b.id), rg)
    }

    /// Adds the 1×C `row` to each row of `a`.
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Tensor {
        let (ra, ca) = self.shape(a);
        assert_eq!(self.shape(row), (1, ca), "add_row: bias must be 1x{ca}");
        let mut v = self.value(a).clone();
        let r = self.value(row).row(0).to_owned();
        for mut x in v.rows_mut() {
            x += &r;
        }
        debug_assert_eq!(v.nrows(), ra);
        let rg = self.needs(&[a.id, row.id]);
        self.push(v, Op::AddRow(a.id, row.id), rg)
    }

    pub fn scale(&mut self, a: Tensor, k: f64) -> Tensor {
        let v = self.value(a) * k;
        let rg = self.needs(&[a.id]);
        self.push(v, Op::Scale(a.id, k), rg)
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(sigmoid);
        let rg = self.needs(&[a.id]);
        self.push(v, Op::Sigmoid(a.id), rg)
    }

    pub fn tanh(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.needs(&[a.id]);
        self.push(v, Op::Tanh(a.id), rg)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.needs(&[a.id]);
        self.push(v, Op::Relu(a.id), rg)
    }

    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Tensor {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.needs(&[a.id]);
        self.push(v, Op::LeakyRelu(a.id, slope), rg)
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols: nothing to concatenate");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.needs(&ids);
        self.push(v, Op::ConcatCols(ids), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Tensor, start: usize, end: usize) -> Tensor {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.needs(&[a.id]);
        self.push(v, Op::SliceCols(a.id, start, end), rg)
    }

    /// `out[i][j] = u[i] + v[j]` for column vectors `u` (N×1) and `v` (M×1).
    pub fn outer_sum(&mut self, u: Tensor, v: Tensor) -> Tensor {
        let (n, cu) = self.shape(u);
        let (m, cv) = self.shape(v);
        assert!(cu == 1 && cv == 1, "outer_sum: inputs must be column vectors");
        let uv = self.value(u);
        let vv = self.value(v);
        let out = Array2::from_shape_fn((n, m), |(i, j)| uv[[i, 0]] + vv[[j, 0]]);
        let rg = self.needs(&[u.id, v.id]);
        self.push(out, Op::OuterSum(u.id, v.id), rg)
    }

    /// Row-wise softmax over the entries where `mask` is true; masked-out
    /// entries are exactly zero.
    ///
    /// Panics if a row has no masked entry.
    pub fn masked_softmax(&mut self, a: Tensor, mask: &Array2<bool>) -> Tensor {
        let x = self.value(a);
        assert_eq!(x.dim(), mask.dim(), "masked_softmax: mask shape mismatch");
        let mut out = Array2::zeros(x.dim());
        for (i, row) in x.rows().into_iter().enumerate() {
            let mrow = mask.row(i);
            let max = row
                .iter()
                .zip(mrow.iter())
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max > f64::NEG_INFINITY, "masked_softmax: row {i} has no neighbors");
            let mut total = 0.0;
            for j in 0..row.len() {
                if mrow[j] {
                    let e = (row[j] - max).exp();
                    out[[i, j]] = e;
                    total += e;
                }
            }
            out.row_mut(i).mapv_inplace(|e| e / total);
        }
        let rg = self.needs(&[a.id]);
        self.push(out, Op::MaskedSoftmax(a.id), rg)
    }

    /// Runs an LSTM from zero state over `inputs` (each `B × D`, treated as
    /// constants) and returns the final hidden state (`B × H`). Weights are
    /// `D × 4H` and `H × 4H`, the bias `1 × 4H`, gate blocks ordered
    /// `[i | f | g | o]`.
    ///
    /// Numerically the same recurrence as composing matmul, sigmoid, tanh and
    /// elementwise ops step by step, in one node with a hand-written
    /// backward sweep.
    pub fn lstm(
        &mut self,
        inputs: &[Array2<f64>],
        input_weight: Tensor,
        hidden_weight: Tensor,
        bias: Tensor,
    ) -> Tensor {
        let (d, h4) = self.shape(input_weight);
        let h = h4 / 4;
        assert!(
            h4 % 4 == 0 && h > 0,
            "lstm: weight width must be a positive multiple of 4"
        );
        assert_eq!(self.shape(hidden_weight), (h, h4), "lstm: hidden weight must be Hx4H");
        assert_eq!(self.shape(bias), (1, h4), "lstm: bias must be 1x4H");
        assert!(!inputs.is_empty(), "lstm: no time steps");
        let b = inputs[0].nrows();
        let wi = self.value(input_weight);
        let wh = self.value(hidden_weight);
        let bias_row = self.value(bias).row(0);

        let mut gates = Vec::with_capacity(inputs.len());
        let mut cells = Vec::with_capacity(inputs.len());
        let mut hiddens = Vec::with_capacity(inputs.len() + 1);
        hiddens.push(Array2::zeros((b, h)));
        let mut c = Array2::<f64>::zeros((b, h));
        for x in inputs {
            assert_eq!(x.dim(), (b, d), "lstm: step input must be BxD");
            let mut z = Array2::zeros((b, h4));
            for mut row in z.rows_mut() {
                row.assign(&bias_row);
            }
            general_mat_mul(1.0, x, wi, 1.0, &mut z);
            general_mat_mul(1.0, hiddens.last().expect("initial state"), wh, 1.0, &mut z);
            let mut next_h = Array2::zeros((b, h));
            for r in 0..b {
                let zr = z.row_mut(r).into_slice().expect("fresh arrays are contiguous");
                activate_gates(zr, h);
                let cr = c.row_mut(r).into_slice().expect("contiguous");
                let hr = next_h.row_mut(r).into_slice().expect("contiguous");
                for k in 0..h {
                    cr[k] = zr[h + k] * cr[k] + zr[k] * zr[2 * h + k];
                    hr[k] = zr[3 * h + k] * fast_tanh(cr[k]);
                }
            }
            gates.push(z);
            cells.push(c.clone());
            hiddens.push(next_h);
        }
        let value = hiddens.last().expect("at least one step").clone();
        let cache = LstmCache {
            inputs: inputs.to_vec(),
            gates,
            cells,
            hiddens,
            input_weight: input_weight.id,
            hidden_weight: hidden_weight.id,
            bias: bias.id,
        };
        let rg = self.needs(&[input_weight.id, hidden_weight.id, bias.id]);
        self.push(value, Op::Lstm(Box::new(cache)), rg)
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.needs(&[a.id]);
        self.push(v, Op::Sum(a.id), rg)
    }

    /// Mean of all entries, as a 1×1 tensor.
    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        let rg = self.needs(&[a.id]);
        self.push(v, Op::Mean(a.id), rg)
    }

    pub fn square(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(|x| x * x);
        let rg = self.needs(&[a.id]);
        self.push(v, Op::Square(a.id), rg)
    }

    /// Mean squared difference between two same-shape tensors.
    pub fn mse(&mut self, prediction: Tensor, target: Tensor) -> Tensor {
        let d = self.sub(prediction, target);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Populates gradients of the scalar `loss` with respect to every node
    /// that requires them. Earlier gradients are discarded.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if loss.id >= self.nodes.len() {
            return Err(Error::Tape(format!("tensor {} does not belong to this tape", loss.id)));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.id].requires_grad {
            return Err(Error::Tape("loss is detached: it depends on no parameter".into()));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.id] = Some(Array2::ones((1, 1)));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[i].value;
        let mut send = |i: usize, d: Array2<f64>| {
            if !self.nodes[i].requires_grad {
                return;
            }
            match &mut grads[i] {
                Some(acc) => *acc += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[*a].requires_grad {
                    send(*a, g.dot(&val(*b).t()));
                }
                if self.nodes[*b].requires_grad {
                    send(*b, val(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, -g);
            }
            Op::Mul(a, b) => {
                send(*a, g * val(*b));
                send(*b, g * val(*a));
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, k) => send(*a, g * *k),
            Op::Sigmoid(a) => send(*a, g * &node.value.mapv(|y| y * (1.0 - y))),
            Op::Tanh(a) => send(*a, g * &node.value.mapv(|y| 1.0 - y * y)),
            Op::Relu(a) => {
                let mut d = g.clone();
                d.zip_mut_with(val(*a), |d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                send(*a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                d.zip_mut_with(val(*a), |d, &x| {
                    if x <= 0.0 {
                        *d *= slope
                    }
                });
                send(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    send(p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                send(*a, d);
            }
            Op::OuterSum(u, v) => {
                send(*u, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                send(*v, g.sum_axis(Axis(0)).insert_axis(Axis(1)));
            }
            Op::MaskedSoftmax(a) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.dim());
                for i in 0..y.nrows() {
                    let dot: f64 = y.row(i).dot(&g.row(i));
                    for j in 0..y.ncols() {
                        d[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                send(*a, d);
            }
            Op::Lstm(cache) => {
                let (dwi, dwh, db) = lstm_backward(cache, val(cache.hidden_weight), g);
                send(cache.input_weight, dwi);
                send(cache.hidden_weight, dwh);
                send(cache.bias, db);
            }
            Op::Sum(a) => send(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let x = val(*a);
                send(*a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64));
            }
            Op::Square(a) => send(*a, g * &(val(*a) * 2.0)),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh` through one `exp`; libm's tanh is several times slower and this
/// sits in the LSTM inner loop. Absolute error stays near 1e-16.
fn fast_tanh(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        // avoids cancellation in 1 - 2/(e^2x + 1)
        let x2 = x * x;
        return x * (1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0);
    }
    let e = (2.0 * x.abs()).exp();
    (1.0 - 2.0 / (e + 1.0)).copysign(x)
}

/// In place: sigmoid on the i, f and o blocks of a fused gate row, tanh on g.
fn activate_gates(z: &mut [f64], h: usize) {
    for (k, v) in z.iter_mut().enumerate() {
        *v = if k / h == 2 { fast_tanh(*v) } else { sigmoid(*v) };
    }
}

#[derive(Debug, Clone)]
struct LstmCache {
    inputs: Vec<Array2<f64>>,
    /// Activated gates per step.
    gates: Vec<Array2<f64>>,
    /// Cell state after each step.
    cells: Vec<Array2<f64>>,
    /// Hidden state before each step, plus the final one.
    hiddens: Vec<Array2<f64>>,
    input_weight: usize,
    hidden_weight: usize,
    bias: usize,
}

/// Backpropagation through time for [`Tape::lstm`], given the gradient of
/// the final hidden state.
fn lstm_backward(cache: &LstmCache, wh: &Array2<f64>, g: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (b, h) = g.dim();
    let d = cache.inputs[0].ncols();
    let mut dwi = Array2::zeros((d, 4 * h));
    let mut dwh = Array2::zeros((h, 4 * h));
    let mut db = Array2::zeros((1, 4 * h));
    let mut dz = Array2::<f64>::zeros((b, 4 * h));
    let mut dh = g.as_standard_layout().into_owned();
    let mut dc = Array2::<f64>::zeros((b, h));
    for t in (0..cache.inputs.len()).rev() {
        let a = &cache.gates[t];
        let c = &cache.cells[t];
        let zeros = Array2::zeros((b, h));
        let c_prev = if t == 0 { &zeros } else { &cache.cells[t - 1] };
        for r in 0..b {
            let cpr = c_prev.row(r);
            let cpr = cpr.as_slice().expect("contiguous");
            let ar = a.row(r);
            let ar = ar.as_slice().expect("contiguous");
            let cr = c.row(r);
            let cr = cr.as_slice().expect("contiguous");
            let dhr = dh.row(r);
            let dhr = dhr.as_slice().expect("contiguous");
            let dzr = dz.row_mut(r).into_slice().expect("contiguous");
            let dcr = dc.row_mut(r).into_slice().expect("contiguous");
            for k in 0..h {
                let (i, f, gg, o) = (ar[k], ar[h + k], ar[2 * h + k], ar[3 * h + k]);
                let tc = fast_tanh(cr[k]);
                let dct = dcr[k] + dhr[k] * o * (1.0 - tc * tc);
                dzr[k] = dct * gg * i * (1.0 - i);
                dzr[h + k] = dct * cpr[k] * f * (1.0 - f);
                dzr[2 * h + k] = dct * i * (1.0 - gg * gg);
                dzr[3 * h + k] = dhr[k] * tc * o * (1.0 - o);
                dcr[k] = dct * f;
            }
        }
        general_mat_mul(1.0, &cache.inputs[t].t(), &dz, 1.0, &mut dwi);
        general_mat_mul(1.0, &cache.hiddens[t].t(), &dz, 1.0, &mut dwh);
        db += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        if t > 0 {
            general_mat_mul(1.0, &dz, &wh.t(), 0.0, &mut dh);
        }
    }
    (dwi, dwh, db)
}
