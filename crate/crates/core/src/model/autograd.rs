//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation of a forward pass. Leaves may borrow
//! their values (model parameters) so that binding a model to a graph is
//! cheap. [`Graph::backward`] walks the tape in reverse and returns the
//! adjoint of every node reachable from the scalar loss.

use std::borrow::Cow;

use super::tensor::{dot, softmax_in_place, Mat};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Nll {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Mat,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::MatMulT(a, b) | Op::Add(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Gelu(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Softmax { x } | Op::SliceCols { x, .. } | Op::SliceRows { x, .. } => vec![*x],
            Op::ConcatCols(p) | Op::ConcatRows(p) => p.clone(),
            Op::GatherRows { table, .. } => vec![*table],
            Op::Nll { logits, .. } => vec![*logits],
        }
    }
}

struct Node<'p> {
    value: Cow<'p, Mat>,
    op: Op,
    /// Whether any differentiable leaf feeds this node.
    grad: bool,
}

#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
pub struct Adjoints(Vec<Option<Mat>>);

impl Adjoints {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0[v.0].as_ref()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Mat>, op: Op) -> Var {
        let grad = op.inputs().iter().any(|v| self.nodes[v.0].grad);
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf borrowing an existing matrix.
    pub fn leaf_ref(&mut self, m: &'p Mat) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(m),
            op: Op::Leaf,
            grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed leaf that receives no gradient; work feeding only constants
    /// is skipped in the reverse pass.
    pub fn constant_ref(&mut self, m: &'p Mat) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(m),
            op: Op::Leaf,
            grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// Leaf owning its value.
    pub fn leaf(&mut self, m: Mat) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(m),
            op: Op::Leaf,
            grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Cow::Owned(v), Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(Cow::Owned(v), Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(Cow::Owned(v), Op::Add(a, b))
    }

    /// Adds the `1 × cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!((1, self.value(a).cols), b.shape(), "add_row shape mismatch");
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        self.push(Cow::Owned(v), Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale(s);
        self.push(Cow::Owned(v), Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for x in &mut v.data {
            *x = gelu(*x);
        }
        self.push(Cow::Owned(v), Op::Gelu(a))
    }

    /// Row-wise layer normalization with scale `1 + gain` and shift `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = Mat::zeros(xv.rows, xv.cols);
        let mut inv_std = Vec::with_capacity(xv.rows);
        let mut out = Mat::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let inv = layer_norm_row(xv.row(r), xhat.row_mut(r));
            inv_std.push(inv);
            for c in 0..xv.cols {
                out.data[r * xv.cols + c] = xhat.get(r, c) * (1.0 + g.data[c]) + b.data[c];
            }
        }
        self.push(
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked
    /// to probability zero.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let mut v = self.value(x).clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let visible = if causal { (r + 1).min(row.len()) } else { row.len() };
            softmax_in_place(&mut row[..visible]);
            row[visible..].iter_mut().for_each(|p| *p = 0.0);
        }
        self.push(Cow::Owned(v), Op::Softmax { x })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut v = Mat::zeros(xv.rows, len);
        for r in 0..xv.rows {
            v.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(Cow::Owned(v), Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        self.push(Cow::Owned(v), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let v = Mat::from_vec(
            len,
            xv.cols,
            xv.data[start * xv.cols..(start + len) * xv.cols].to_vec(),
        );
        self.push(Cow::Owned(v), Op::SliceRows { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(
            Cow::Owned(Mat::from_vec(rows, cols, data)),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            Cow::Owned(v),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Sum over rows of `-log softmax(logits[r])[targets[r]]`; rows with no
    /// target contribute nothing.
    pub fn nll(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "nll target count mismatch");
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let row = probs.row_mut(r);
            softmax_in_place(row);
            if let Some(t) = *t {
                let logits_row = lv.row(r);
                loss -= logits_row[t] - super::tensor::log_sum_exp(logits_row);
            }
        }
        self.push(
            Cow::Owned(Mat::scalar(loss)),
            Op::Nll {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Reverse pass from the scalar `loss`. The graph is left untouched, so
    /// repeated calls give identical results.
    pub fn backward(&self, loss: Var) -> Adjoints {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Mat::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].grad {
                continue;
            }
            let Some(g) = adj[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Adjoints(adj)
    }

    fn backprop_node(&self, i: usize, g: &Mat, adj: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.matmul_t(self.value(*b)));
                }
                if self.needs(*b) {
                    accumulate(adj, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.needs(*a) {
                    accumulate(adj, *a, g.matmul(self.value(*b)));
                }
                if self.needs(*b) {
                    accumulate(adj, *b, g.t_matmul(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::AddRow(a, bias) => {
                let mut db = Mat::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (d, x) in db.data.iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(adj, *a, g.clone());
                accumulate(adj, *bias, db);
            }
            Op::Scale(a, s) => {
                let mut da = g.clone();
                da.scale(*s);
                accumulate(adj, *a, da);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let mut da = g.clone();
                for (d, &xv) in da.data.iter_mut().zip(&x.data) {
                    *d *= gelu_grad(xv);
                }
                accumulate(adj, *a, da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let cols = g.cols;
                let mut dx = Mat::zeros(g.rows, cols);
                let mut dgain = Mat::zeros(1, cols);
                let mut dbias = Mat::zeros(1, cols);
                let mut dxhat = vec![0.0; cols];
                for (r, &istd) in inv_std.iter().enumerate() {
                    let gr = g.row(r);
                    let xh = xhat.row(r);
                    for c in 0..cols {
                        dgain.data[c] += gr[c] * xh[c];
                        dbias.data[c] += gr[c];
                        dxhat[c] = gr[c] * (1.0 + gv.data[c]);
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dx = dot(&dxhat, xh) / cols as f64;
                    let out = dx.row_mut(r);
                    for c in 0..cols {
                        out[c] = istd * (dxhat[c] - mean_d - xh[c] * mean_dx);
                    }
                }
                accumulate(adj, *x, dx);
                accumulate(adj, *gain, dgain);
                accumulate(adj, *bias, dbias);
            }
            Op::Softmax { x } => {
                let y = &node.value;
                let mut dx = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let s = dot(yr, gr);
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = yr[c] * (gr[c] - s);
                    }
                }
                accumulate(adj, *x, dx);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.rows, xv.cols);
                for r in 0..g.rows {
                    dx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                accumulate(adj, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    let mut dp = Mat::zeros(g.rows, w);
                    for r in 0..g.rows {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    off += w;
                    accumulate(adj, p, dp);
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.rows, xv.cols);
                dx.data[start * xv.cols..(start + g.rows) * xv.cols].copy_from_slice(&g.data);
                accumulate(adj, *x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.rows * pv.cols;
                    let dp = Mat::from_vec(pv.rows, pv.cols, g.data[off..off + n].to_vec());
                    off += n;
                    accumulate(adj, p, dp);
                }
            }
            Op::GatherRows { table, ids } => {
                if !self.needs(*table) {
                    return;
                }
                let tv = self.value(*table);
                let mut dt = Mat::zeros(tv.rows, tv.cols);
                for (r, &id) in ids.iter().enumerate() {
                    for (d, x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(adj, *table, dt);
            }
            Op::Nll {
                logits,
                targets,
                probs,
            } => {
                let scale = g.data[0];
                let mut dl = Mat::zeros(probs.rows, probs.cols);
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let out = dl.row_mut(r);
                    out.copy_from_slice(probs.row(r));
                    out[t] -= 1.0;
                    out.iter_mut().for_each(|v| *v *= scale);
                }
                accumulate(adj, *logits, dl);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Mat>], v: Var, m: Mat) {
    match &mut adj[v.0] {
        Some(a) => a.add_assign(&m),
        slot @ None => *slot = Some(m),
    }
}

/// Normalizes `x` into `out` (zero mean, unit variance) and returns the
/// inverse standard deviation.
pub(crate) fn layer_norm_row(x: &[f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv;
    }
    inv
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
