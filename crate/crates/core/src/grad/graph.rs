//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Nodes are
//! created in topological order, so `backward` is a single reverse sweep.

use std::collections::HashMap;

use super::kernels;
use super::tensor::{ParamId, ParamSet, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Identifies a parameter across parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey {
    pub set: u32,
    pub index: usize,
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    entries: Vec<(ParamKey, Vec<f32>)>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, &[f32])> {
        self.entries.iter().map(|(k, g)| (*k, g.as_slice()))
    }

    pub fn get(&self, set: &ParamSet, id: ParamId) -> Option<&[f32]> {
        let key = ParamKey {
            set: set.tag(),
            index: id.0,
        };
        self.entries
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, g)| g.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GradError {
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

const LN_EPS: f32 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamKey),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    MulScalar(Var, f32),
    Concat(Vec<Var>),
    GatherRow { table: Var, row: usize },
    StackRows(Vec<Var>),
    SelectRow { m: Var, row: usize },
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Vec<f32>, inv_std: Vec<f32> },
    Mean(Var),
    Sum(Var),
    MeanRows(Var),
    Pick { x: Var, index: usize },
    Reshape(Var),
    Transpose(Var),
    AddN(Vec<Var>),
    Gru { x: Var, h: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var, cache: Vec<f32> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    op: Op,
    tracked: bool,
}

/// A recorded computation.
///
/// With recording off the graph still evaluates but nothing is tracked, so
/// `backward` produces no gradients.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamKey, Var>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => panic!("expected a vector or matrix, got shape {shape:?}"),
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) {
    assert!(a == b, "{op}: shape mismatch {a:?} vs {b:?}");
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            record: true,
        }
    }

    /// A graph that evaluates without tracking gradients.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let tracked = self.record && inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec())
    }

    pub fn scalar_value(&self, v: Var) -> f32 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "not a scalar: shape {:?}", self.shape(v));
        val[0]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A constant input; never receives gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f32) -> Var {
        self.constant(&Tensor::scalar(v))
    }

    /// Leaf for a parameter, copied once per graph. Tracked iff the parameter
    /// requires grad and the graph records.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        let key = ParamKey {
            set: set.tag(),
            index: id.0,
        };
        if let Some(&v) = self.param_leaves.get(&key) {
            return v;
        }
        let p = set.get(id);
        self.nodes.push(Node {
            shape: p.value.shape().to_vec(),
            value: p.value.data().to_vec(),
            op: Op::Param(key),
            tracked: self.record && p.requires_grad(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert(key, v);
        v
    }

    /// `[m,k] x [k,n]`; a vector on the left acts as one row, on the right as one column.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k) = rows_cols(&sa);
        let (kb, n) = match sb.as_slice() {
            [k] => (*k, 1),
            [k, n] => (*k, *n),
            _ => panic!("matmul: bad right shape {sb:?}"),
        };
        assert!(k == kb, "matmul: shape mismatch {sa:?} x {sb:?}");
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let shape = match (sa.len(), sb.len()) {
            (1, 1) => vec![1],
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        self.push(shape, out, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape("add", self.shape(a), self.shape(b));
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape("sub", self.shape(a), self.shape(b));
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape("mul", self.shape(a), self.shape(b));
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a bias vector to a vector or to every row of a matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (_, cols) = rows_cols(self.shape(x));
        assert!(
            self.shape(bias) == [cols],
            "add_bias: shape mismatch {:?} + {:?}",
            self.shape(x),
            self.shape(bias)
        );
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        self.push(self.shape(x).to_vec(), out, Op::AddBias { x, bias }, &[x, bias])
    }

    /// `w x + b` with `w` of shape `[out, in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(w, x);
        match b {
            Some(b) => self.add_bias(y, b),
            None => y,
        }
    }

    pub fn mul_scalar(&mut self, x: Var, k: f32) -> Var {
        let out = self.value(x).iter().map(|v| v * k).collect();
        self.push(self.shape(x).to_vec(), out, Op::MulScalar(x, k), &[x])
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for &p in parts {
            assert!(self.shape(p).len() == 1, "concat: expected vectors, got {:?}", self.shape(p));
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        self.push(vec![n], out, Op::Concat(parts.to_vec()), parts)
    }

    /// Embedding lookup: row `row` of a matrix.
    pub fn gather_row(&mut self, table: Var, row: usize) -> Var {
        let (r, c) = rows_cols(self.shape(table));
        assert!(row < r, "gather_row: row {row} out of {r}");
        let out = self.value(table)[row * c..(row + 1) * c].to_vec();
        self.push(vec![c], out, Op::GatherRow { table, row }, &[table])
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows: no rows");
        let c = self.shape(rows[0]).to_vec();
        let mut out = Vec::with_capacity(rows.len() * c[0]);
        for &r in rows {
            assert!(self.shape(r) == c.as_slice() && c.len() == 1, "stack_rows: shape mismatch {:?} vs {:?}", c, self.shape(r));
            out.extend_from_slice(self.value(r));
        }
        self.push(vec![rows.len(), c[0]], out, Op::StackRows(rows.to_vec()), rows)
    }

    pub fn select_row(&mut self, m: Var, row: usize) -> Var {
        let shape = self.shape(m).to_vec();
        assert!(shape.len() == 2, "select_row: expected a matrix, got {shape:?}");
        assert!(row < shape[0], "select_row: row {row} out of {}", shape[0]);
        let c = shape[1];
        let out = self.value(m)[row * c..(row + 1) * c].to_vec();
        self.push(vec![c], out, Op::SelectRow { m, row }, &[m])
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(self.shape(x).to_vec(), out, op, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f32::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f32::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f32::ln, Op::Log(x))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, c) = rows_cols(self.shape(x));
        let mut out = self.value(x).to_vec();
        out.chunks_mut(c).for_each(kernels::softmax_in_place);
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x), &[x])
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (_, c) = rows_cols(self.shape(x));
        let mut out = self.value(x).to_vec();
        out.chunks_mut(c).for_each(kernels::log_softmax_in_place);
        self.push(self.shape(x).to_vec(), out, Op::LogSoftmax(x), &[x])
    }

    /// Layer normalization along the last axis, then `gain * x + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (r, c) = rows_cols(&shape);
        assert!(
            self.shape(gain) == [c] && self.shape(bias) == [c],
            "layer_norm: shape mismatch {shape:?} with gain {:?} bias {:?}",
            self.shape(gain),
            self.shape(bias)
        );
        let mut normed = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let xv = self.value(x);
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f32>() / c as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                normed[i * c + j] = (row[j] - mean) * is;
            }
        }
        let g = self.value(gain);
        let b = self.value(bias);
        let out = normed
            .iter()
            .enumerate()
            .map(|(idx, v)| v * g[idx % c] + b[idx % c])
            .collect();
        self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f32>() / v.len() as f32;
        self.push(vec![1], vec![m], Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum::<f32>();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    /// Column-wise mean of a matrix.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = rows_cols(self.shape(x));
        let mut out = vec![0.0; c];
        for row in self.value(x).chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f32);
        self.push(vec![c], out, Op::MeanRows(x), &[x])
    }

    /// Entry `index` of a vector, as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let v = self.value(x);
        assert!(index < v.len(), "pick: index {index} out of {}", v.len());
        let out = vec![v[index]];
        self.push(vec![1], out, Op::Pick { x, index }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert!(
            shape.iter().product::<usize>() == self.value(x).len(),
            "reshape: {:?} into {shape:?}",
            self.shape(x)
        );
        let out = self.value(x).to_vec();
        self.push(shape.to_vec(), out, Op::Reshape(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        assert!(shape.len() == 2, "transpose: expected a matrix, got {shape:?}");
        let (r, c) = (shape[0], shape[1]);
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose(x), &[x])
    }

    /// Sum of same-shaped values.
    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n: nothing to add");
        let shape = self.shape(xs[0]).to_vec();
        let mut out = vec![0.0; self.value(xs[0]).len()];
        for &x in xs {
            same_shape("add_n", &shape, self.shape(x));
            out.iter_mut().zip(self.value(x)).for_each(|(o, v)| *o += v);
        }
        self.push(shape, out, Op::AddN(xs.to_vec()), xs)
    }

    /// One GRU cell step with gates ordered (reset, update, candidate):
    ///
    /// r = σ(W_ir x + b_ir + W_hr h + b_hr)
    /// z = σ(W_iz x + b_iz + W_hz h + b_hz)
    /// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
    /// h' = (1 − z) ⊙ n + z ⊙ h
    pub fn gru_step(&mut self, x: Var, h: Var, w: &GruVars) -> Var {
        let e = self.shape(x).to_vec();
        let hs = self.shape(h).to_vec();
        assert!(e.len() == 1 && hs.len() == 1, "gru_step: x {e:?} and h {hs:?} must be vectors");
        let (e, hd) = (e[0], hs[0]);
        assert!(
            self.shape(w.w_ih) == [3 * hd, e]
                && self.shape(w.w_hh) == [3 * hd, hd]
                && self.shape(w.b_ih) == [3 * hd]
                && self.shape(w.b_hh) == [3 * hd],
            "gru_step: parameter shapes {:?} {:?} do not fit x [{e}] h [{hd}]",
            self.shape(w.w_ih),
            self.shape(w.w_hh)
        );
        let mut gi = self.value(w.b_ih).to_vec();
        kernels::gemv_acc(self.value(w.w_ih), self.value(x), &mut gi, 3 * hd, e);
        let mut gh = self.value(w.b_hh).to_vec();
        kernels::gemv_acc(self.value(w.w_hh), self.value(h), &mut gh, 3 * hd, hd);
        let hv = self.value(h);
        let mut cache = vec![0.0; 4 * hd];
        let mut out = vec![0.0; hd];
        for j in 0..hd {
            let r = kernels::sigmoid(gi[j] + gh[j]);
            let z = kernels::sigmoid(gi[hd + j] + gh[hd + j]);
            let ghn = gh[2 * hd + j];
            let n = (gi[2 * hd + j] + r * ghn).tanh();
            out[j] = (1.0 - z) * n + z * hv[j];
            cache[j] = r;
            cache[hd + j] = z;
            cache[2 * hd + j] = n;
            cache[3 * hd + j] = ghn;
        }
        let op = Op::Gru {
            x,
            h,
            w_ih: w.w_ih,
            w_hh: w.w_hh,
            b_ih: w.b_ih,
            b_hh: w.b_hh,
            cache,
        };
        self.push(vec![hd], out, op, &[x, h, w.w_ih, w.w_hh, w.b_ih, w.b_hh])
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(GradError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        let mut out = Gradients::default();
        if !self.nodes[loss.0].tracked {
            return Ok(out);
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            self.backprop_node(node, &dy, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node,
        dy: &[f32],
        grads: &mut [Option<Vec<f32>>],
        out: &mut Gradients,
    ) {
        let nodes = &self.nodes;
        // Gradient buffer of a tracked input.
        macro_rules! buf {
            ($v:expr) => {
                grad_buf(nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Param(key) => out.entries.push((*key, dy.to_vec())),
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let bv = self.value(*b);
                if let Some(ga) = buf!(*a) {
                    kernels::gemm_nt_acc(dy, bv, ga, m, n, k);
                }
                let av = self.value(*a);
                if let Some(gb) = buf!(*b) {
                    kernels::gemm_tn_acc(av, dy, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                if let Some(g) = buf!(*a) {
                    kernels::axpy(1.0, dy, g);
                }
                if let Some(g) = buf!(*b) {
                    kernels::axpy(1.0, dy, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = buf!(*a) {
                    kernels::axpy(1.0, dy, g);
                }
                if let Some(g) = buf!(*b) {
                    kernels::axpy(-1.0, dy, g);
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if let Some(g) = buf!(*a) {
                    g.iter_mut().zip(dy.iter().zip(bv)).for_each(|(g, (d, y))| *g += d * y);
                }
                if let Some(g) = buf!(*b) {
                    g.iter_mut().zip(dy.iter().zip(av)).for_each(|(g, (d, x))| *g += d * x);
                }
            }
            Op::AddBias { x, bias } => {
                if let Some(g) = buf!(*x) {
                    kernels::axpy(1.0, dy, g);
                }
                if let Some(g) = buf!(*bias) {
                    let c = g.len();
                    for row in dy.chunks(c) {
                        kernels::axpy(1.0, row, g);
                    }
                }
            }
            Op::MulScalar(x, k) => {
                if let Some(g) = buf!(*x) {
                    kernels::axpy(*k, dy, g);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(g) = buf!(*p) {
                        kernels::axpy(1.0, &dy[off..off + len], g);
                    }
                    off += len;
                }
            }
            Op::GatherRow { table, row } => {
                if let Some(g) = buf!(*table) {
                    let c = dy.len();
                    kernels::axpy(1.0, dy, &mut g[row * c..(row + 1) * c]);
                }
            }
            Op::StackRows(rows) => {
                let c = dy.len() / rows.len();
                for (i, r) in rows.iter().enumerate() {
                    if let Some(g) = buf!(*r) {
                        kernels::axpy(1.0, &dy[i * c..(i + 1) * c], g);
                    }
                }
            }
            Op::SelectRow { m, row } => {
                if let Some(g) = buf!(*m) {
                    let c = dy.len();
                    kernels::axpy(1.0, dy, &mut g[row * c..(row + 1) * c]);
                }
            }
            Op::Tanh(x) => {
                if let Some(g) = buf!(*x) {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(&node.value) {
                        *g += d * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                if let Some(g) = buf!(*x) {
                    for ((g, d), v) in g.iter_mut().zip(dy).zip(xv) {
                        if *v > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(g) = buf!(*x) {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(&node.value) {
                        *g += d * y * (1.0 - y);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(g) = buf!(*x) {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(&node.value) {
                        *g += d * y;
                    }
                }
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                if let Some(g) = buf!(*x) {
                    for ((g, d), v) in g.iter_mut().zip(dy).zip(xv) {
                        *g += d / v;
                    }
                }
            }
            Op::Softmax(x) => {
                let (_, c) = rows_cols(&node.shape);
                if let Some(g) = buf!(*x) {
                    for ((gr, dr), yr) in g.chunks_mut(c).zip(dy.chunks(c)).zip(node.value.chunks(c)) {
                        let dot: f32 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += y * (d - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let (_, c) = rows_cols(&node.shape);
                if let Some(g) = buf!(*x) {
                    for ((gr, dr), yr) in g.chunks_mut(c).zip(dy.chunks(c)).zip(node.value.chunks(c)) {
                        let total: f32 = dr.iter().sum();
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += d - y.exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (_, c) = rows_cols(&node.shape);
                let gv = self.value(*gain);
                if let Some(g) = buf!(*gain) {
                    for (dr, nr) in dy.chunks(c).zip(normed.chunks(c)) {
                        for j in 0..c {
                            g[j] += dr[j] * nr[j];
                        }
                    }
                }
                if let Some(g) = buf!(*bias) {
                    for dr in dy.chunks(c) {
                        kernels::axpy(1.0, dr, g);
                    }
                }
                if let Some(g) = buf!(*x) {
                    for (i, ((gr, dr), nr)) in g
                        .chunks_mut(c)
                        .zip(dy.chunks(c))
                        .zip(normed.chunks(c))
                        .enumerate()
                    {
                        let dn: Vec<f32> = dr.iter().zip(gv).map(|(d, g)| d * g).collect();
                        let mean_dn = dn.iter().sum::<f32>() / c as f32;
                        let mean_dn_n = dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f32>() / c as f32;
                        for j in 0..c {
                            gr[j] += inv_std[i] * (dn[j] - mean_dn - nr[j] * mean_dn_n);
                        }
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(g) = buf!(*x) {
                    let k = dy[0] / g.len() as f32;
                    g.iter_mut().for_each(|v| *v += k);
                }
            }
            Op::Sum(x) => {
                if let Some(g) = buf!(*x) {
                    g.iter_mut().for_each(|v| *v += dy[0]);
                }
            }
            Op::MeanRows(x) => {
                if let Some(g) = buf!(*x) {
                    let c = dy.len();
                    let r = g.len() / c;
                    for row in g.chunks_mut(c) {
                        kernels::axpy(1.0 / r as f32, dy, row);
                    }
                }
            }
            Op::Pick { x, index } => {
                if let Some(g) = buf!(*x) {
                    g[*index] += dy[0];
                }
            }
            Op::Reshape(x) => {
                if let Some(g) = buf!(*x) {
                    kernels::axpy(1.0, dy, g);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (node.shape[1], node.shape[0]);
                if let Some(g) = buf!(*x) {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += dy[j * r + i];
                        }
                    }
                }
            }
            Op::AddN(xs) => {
                for x in xs {
                    if let Some(g) = buf!(*x) {
                        kernels::axpy(1.0, dy, g);
                    }
                }
            }
            Op::Gru {
                x,
                h,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache,
            } => {
                let hd = dy.len();
                let e = self.value(*x).len();
                let hv = self.value(*h);
                let (r, rest) = cache.split_at(hd);
                let (z, rest) = rest.split_at(hd);
                let (n, ghn) = rest.split_at(hd);
                let mut dgi = vec![0.0; 3 * hd];
                let mut dgh = vec![0.0; 3 * hd];
                let mut dh_direct = vec![0.0; hd];
                for j in 0..hd {
                    let d = dy[j];
                    let dz = d * (hv[j] - n[j]);
                    let dn = d * (1.0 - z[j]);
                    dh_direct[j] = d * z[j];
                    let dpre_n = dn * (1.0 - n[j] * n[j]);
                    let dr = dpre_n * ghn[j];
                    let dpre_z = dz * z[j] * (1.0 - z[j]);
                    let dpre_r = dr * r[j] * (1.0 - r[j]);
                    dgi[j] = dpre_r;
                    dgi[hd + j] = dpre_z;
                    dgi[2 * hd + j] = dpre_n;
                    dgh[j] = dpre_r;
                    dgh[hd + j] = dpre_z;
                    dgh[2 * hd + j] = dpre_n * r[j];
                }
                let xv = self.value(*x);
                let wih = self.value(*w_ih);
                let whh = self.value(*w_hh);
                if let Some(g) = buf!(*x) {
                    kernels::gemv_t_acc(wih, &dgi, g, 3 * hd, e);
                }
                if let Some(g) = buf!(*h) {
                    kernels::gemv_t_acc(whh, &dgh, g, 3 * hd, hd);
                    kernels::axpy(1.0, &dh_direct, g);
                }
                if let Some(g) = buf!(*w_ih) {
                    kernels::outer_acc(&dgi, xv, g);
                }
                if let Some(g) = buf!(*w_hh) {
                    kernels::outer_acc(&dgh, hv, g);
                }
                if let Some(g) = buf!(*b_ih) {
                    kernels::axpy(1.0, &dgi, g);
                }
                if let Some(g) = buf!(*b_hh) {
                    kernels::axpy(1.0, &dgh, g);
                }
            }
        }
    }
}

fn grad_buf<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f32>>], v: Var) -> Option<&'g mut Vec<f32>> {
    let n = &nodes[v.0];
    if !n.tracked {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

/// Graph handles for the four GRU parameter tensors.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}
