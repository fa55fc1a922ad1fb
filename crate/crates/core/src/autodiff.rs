//! Reverse-mode differentiation over a flat tape.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to run its adjoint. Nodes are only ever appended, so node
//! order is a valid topological order and [`Tape::backward`] is a single
//! reverse sweep.
//!
//! Gradients persist on the tape: calling `backward` twice without
//! [`Tape::zero_grad`] adds the second pass on top of the first, for leaves
//! and intermediate nodes alike.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, ParamId, ParamStore, RowSparse, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Unary {
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Exp,
    Tanh,
    /// Identity; used by tests that need σ removed from a layer.
    Identity,
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    Constant,
    MatMul(Var, Var),
    SparseMatMul(Arc<RowSparse>, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    OuterAdd(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    HConcat(Vec<Var>),
    VConcat(Vec<Var>),
    MeanRows(Var),
    MaxRows { x: Var, argmax: Vec<usize> },
    Sum(Var),
    Gather { x: Var, idx: Vec<usize> },
    SliceRows { x: Var, start: usize },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// A single-threaded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn value(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.rows, n.cols, n.value.clone()).expect("node shape is consistent")
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let n = self.node(v);
        n.grad
            .as_ref()
            .map(|g| Tensor::new(n.rows, n.cols, g.clone()).expect("grad shape is consistent"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.shape();
        self.push(r, c, t.data().to_vec(), Op::Constant, false)
    }

    /// A free input that receives a gradient.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.shape();
        self.push(r, c, t.data().to_vec(), Op::Leaf { param: None }, true)
    }

    /// A leaf bound to a stored parameter; see [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        let (r, c) = t.shape();
        self.push(
            r,
            c,
            t.data().to_vec(),
            Op::Leaf { param: Some(id) },
            t.requires_grad(),
        )
    }

    /// Adds the gradients held by parameter leaves into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for n in &self.nodes {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&n.op, &n.grad) {
                store.get_mut(*id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    // ---------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::dim("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.values(a), self.values(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    /// `A · x` for a constant sparse `A`.
    pub fn sparse_matmul(&mut self, a: &Arc<RowSparse>, x: Var) -> Result<Var> {
        let (m, k) = a.shape();
        let (k2, n) = self.shape(x);
        if k != k2 {
            return Err(Error::dim("sparse_matmul", (m, k), (k2, n)));
        }
        let xv = self.values(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let o = &mut out[i * n..(i + 1) * n];
            for &(j, w) in a.row(i) {
                o.iter_mut().zip(&xv[j * n..(j + 1) * n]).for_each(|(o, x)| *o += w * x);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(m, n, out, Op::SparseMatMul(Arc::clone(a), x), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let (r, c) = t.shape();
        let ng = self.ng(a);
        self.push(r, c, t.into_data(), Op::Transpose(a), ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = zip_with(self.values(a), self.values(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let out = zip_with(self.values(a), self.values(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = zip_with(self.values(a), self.values(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), ng))
    }

    /// `x (m×n) + row (1×n)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(x);
        let rs = self.shape(row);
        if rs != (1, n) {
            return Err(Error::dim("add_row", (m, n), rs));
        }
        let rv = self.values(row);
        let out: Vec<f64> = self
            .values(x)
            .chunks(n.max(1))
            .flat_map(|r| r.iter().zip(rv).map(|(a, b)| a + b))
            .collect();
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(m, n, out, Op::AddRow(x, row), ng))
    }

    /// `x (m×n) ⊙ col (m×1)` broadcast over columns.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (m, n) = self.shape(x);
        let cs = self.shape(col);
        if cs != (m, 1) {
            return Err(Error::dim("mul_col", (m, n), cs));
        }
        let cv = self.values(col);
        let xv = self.values(x);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(xv[i * n..(i + 1) * n].iter().map(|a| a * cv[i]));
        }
        let ng = self.ng(x) || self.ng(col);
        Ok(self.push(m, n, out, Op::MulCol(x, col), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let (r, c) = self.shape(x);
        let out = self.values(x).iter().map(|v| v * s).collect();
        let ng = self.ng(x);
        self.push(r, c, out, Op::Scale(x, s), ng)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let (r, c) = self.shape(x);
        let out = self.values(x).iter().map(|v| v + s).collect();
        let ng = self.ng(x);
        self.push(r, c, out, Op::AddScalar(x), ng)
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let (r, c) = self.shape(x);
        let out = self.values(x).iter().map(|&v| apply_unary(f, v)).collect();
        let ng = self.ng(x);
        self.push(r, c, out, Op::Unary(x, f), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    /// `out[i][j] = col[i] + row[j]` for `col: m×1`, `row: 1×n`.
    pub fn outer_add(&mut self, col: Var, row: Var) -> Result<Var> {
        let (m, c1) = self.shape(col);
        let (r1, n) = self.shape(row);
        if c1 != 1 || r1 != 1 {
            return Err(Error::dim("outer_add", (m, c1), (r1, n)));
        }
        let cv = self.values(col);
        let rv = self.values(row);
        let mut out = Vec::with_capacity(m * n);
        for &a in cv {
            out.extend(rv.iter().map(|b| a + b));
        }
        let ng = self.ng(col) || self.ng(row);
        Ok(self.push(m, n, out, Op::OuterAdd(col, row), ng))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        self.softmax_impl(x, None)
    }

    /// Row-wise softmax restricted to entries where `mask` is true. Masked
    /// entries are exactly zero; a row with no admissible entry is all zero.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        let (m, n) = self.shape(x);
        if mask.len() != m * n {
            return Err(Error::dim("masked_softmax_rows", (m, n), (mask.len(), 1)));
        }
        Ok(self.softmax_impl(x, Some(mask)))
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Vec<bool>>) -> Var {
        let (m, n) = self.shape(x);
        let xv = self.values(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let keep = |j: usize| mask.as_ref().is_none_or(|mk| mk[i * n + j]);
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > mx {
                    mx = v;
                }
            }
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let o = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if keep(j) {
                    o[j] = (row[j] - mx).exp();
                    total += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        let ng = self.ng(x);
        self.push(m, n, out, Op::Softmax(x), ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let xv = self.values(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        let ng = self.ng(x);
        self.push(m, n, out, Op::LogSoftmax(x), ng)
    }

    /// Per-row `(x − μ) / √(σ² + eps)` with population variance and no affine.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let (m, n) = self.shape(x);
        let xv = self.values(x);
        let mut out = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                out[i * n + j] = (row[j] - mu) * is;
            }
        }
        let ng = self.ng(x);
        self.push(m, n, out, Op::LayerNorm { x, inv_std }, ng)
    }

    /// Side-by-side concatenation: all parts share the row count.
    pub fn hconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::Contract("hconcat of nothing".into()))?;
        let mut n = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != m {
                return Err(Error::dim("hconcat", (m, n), s));
            }
            n += s.1;
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.values(p)[i * c..(i + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(m, n, out, Op::HConcat(parts.to_vec()), ng))
    }

    /// Stacks parts vertically: all parts share the column count.
    pub fn vconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| Error::Contract("vconcat of nothing".into()))?;
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.1 != n {
                return Err(Error::dim("vconcat", (m, n), s));
            }
            m += s.0;
            out.extend_from_slice(self.values(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(m, n, out, Op::VConcat(parts.to_vec()), ng))
    }

    /// Column means over all rows, `1×n`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let xv = self.values(x);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += xv[i * n + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        let ng = self.ng(x);
        self.push(1, n, out, Op::MeanRows(x), ng)
    }

    /// Column maxima over all rows, `1×n`; ties go to the lowest row.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let xv = self.values(x);
        let mut out = vec![f64::NEG_INFINITY; n];
        let mut argmax = vec![0; n];
        for i in 0..m {
            for j in 0..n {
                if xv[i * n + j] > out[j] {
                    out[j] = xv[i * n + j];
                    argmax[j] = i;
                }
            }
        }
        let ng = self.ng(x);
        self.push(1, n, out, Op::MaxRows { x, argmax }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values(x).iter().sum();
        let ng = self.ng(x);
        self.push(1, 1, vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.values(x).len();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::Contract(format!("row index {bad} out of range for {m} rows")));
        }
        let xv = self.values(x);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&xv[i * n..(i + 1) * n]);
        }
        let ng = self.ng(x);
        Ok(self.push(idx.len(), n, out, Op::Gather { x, idx: idx.to_vec() }, ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if start + len > m {
            return Err(Error::Contract(format!(
                "row slice {start}..{} out of range for {m} rows",
                start + len
            )));
        }
        let out = self.values(x)[start * n..(start + len) * n].to_vec();
        let ng = self.ng(x);
        Ok(self.push(len, n, out, Op::SliceRows { x, start }, ng))
    }

    // ----------------------------------------------------------- backward

    /// Propagates d(loss)/d(node) to every node that can carry a gradient
    /// and adds it to the gradients already stored on the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let (m, n) = (node.rows, node.cols);
        let y = &node.value;
        match &node.op {
            Op::Leaf { .. } | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (_, k) = self.shape(*a);
                if self.ng(*a) {
                    // dA = G · Bᵀ
                    let bv = self.values(*b);
                    let ga = slot(grads, *a, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                }
                if self.ng(*b) {
                    // dB = Aᵀ · G
                    let av = self.values(*a);
                    let gb = slot(grads, *b, k * n);
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += a_ip * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::SparseMatMul(a, x) => {
                if self.ng(*x) {
                    let (k, _) = self.shape(*x);
                    let gx = slot(grads, *x, k * n);
                    for i in 0..m {
                        for &(j, w) in a.row(i) {
                            let gi = &g[i * n..(i + 1) * n];
                            gx[j * n..(j + 1) * n].iter_mut().zip(gi).for_each(|(d, v)| *d += w * v);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if self.ng(*a) {
                    // node is m×n, source is n×m
                    let ga = slot(grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[j * m + i] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        add_into(slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.ng(*b) {
                    let gb = slot(grads, *b, g.len());
                    gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.values(*b);
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.ng(*b) {
                    let av = self.values(*a);
                    let gb = slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddRow(x, row) => {
                if self.ng(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.ng(*row) {
                    let gr = slot(grads, *row, n);
                    for i in 0..m {
                        for j in 0..n {
                            gr[j] += g[i * n + j];
                        }
                    }
                }
            }
            Op::MulCol(x, col) => {
                if self.ng(*x) {
                    let cv = self.values(*col);
                    let gx = slot(grads, *x, g.len());
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] += g[i * n + j] * cv[i];
                        }
                    }
                }
                if self.ng(*col) {
                    let xv = self.values(*x);
                    let gc = slot(grads, *col, m);
                    for i in 0..m {
                        for j in 0..n {
                            gc[i] += g[i * n + j] * xv[i * n + j];
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                let gx = slot(grads, *x, g.len());
                gx.iter_mut().zip(g).for_each(|(a, d)| *a += s * d);
            }
            Op::AddScalar(x) => add_into(slot(grads, *x, g.len()), g),
            Op::Unary(x, f) => {
                let xv = self.values(*x);
                let gx = slot(grads, *x, g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * unary_derivative(*f, xv[i], y[i]);
                }
            }
            Op::OuterAdd(col, row) => {
                if self.ng(*col) {
                    let gc = slot(grads, *col, m);
                    for i in 0..m {
                        gc[i] += g[i * n..(i + 1) * n].iter().sum::<f64>();
                    }
                }
                if self.ng(*row) {
                    let gr = slot(grads, *row, n);
                    for i in 0..m {
                        for j in 0..n {
                            gr[j] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                // Masked entries have y = 0 and therefore receive no gradient.
                let gx = slot(grads, *x, g.len());
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gx[i * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let gx = slot(grads, *x, g.len());
                for i in 0..m {
                    let gsum: f64 = g[i * n..(i + 1) * n].iter().sum();
                    for j in 0..n {
                        gx[i * n + j] += g[i * n + j] - y[i * n + j].exp() * gsum;
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let gx = slot(grads, *x, g.len());
                let nf = n as f64;
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let gmean = gr.iter().sum::<f64>() / nf;
                    let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / nf;
                    for j in 0..n {
                        gx[i * n + j] += inv_std[i] * (gr[j] - gmean - yr[j] * gy);
                    }
                }
            }
            Op::HConcat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    if self.ng(p) {
                        let gp = slot(grads, p, m * c);
                        for i in 0..m {
                            for j in 0..c {
                                gp[i * c + j] += g[i * n + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::VConcat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.values(p).len();
                    if self.ng(p) {
                        add_into(slot(grads, p, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::MeanRows(x) => {
                let (xm, xn) = self.shape(*x);
                let gx = slot(grads, *x, xm * xn);
                for i in 0..xm {
                    for j in 0..xn {
                        gx[i * xn + j] += g[j] / xm as f64;
                    }
                }
            }
            Op::MaxRows { x, argmax } => {
                let xn = self.shape(*x).1;
                let len = self.values(*x).len();
                let gx = slot(grads, *x, len);
                for (j, &i) in argmax.iter().enumerate() {
                    gx[i * xn + j] += g[j];
                }
            }
            Op::Sum(x) => {
                let len = self.values(*x).len();
                let gx = slot(grads, *x, len);
                gx.iter_mut().for_each(|a| *a += g[0]);
            }
            Op::Gather { x, idx } => {
                let len = self.values(*x).len();
                let gx = slot(grads, *x, len);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        gx[i * n + j] += g[r * n + j];
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let len = self.values(*x).len();
                let gx = slot(grads, *x, len);
                add_into(&mut gx[start * n..(start + m) * n], g);
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn apply_unary(f: Unary, v: f64) -> f64 {
    match f {
        Unary::Sigmoid => sigmoid(v),
        Unary::Relu => v.max(0.0),
        Unary::LeakyRelu(s) => {
            if v > 0.0 {
                v
            } else {
                s * v
            }
        }
        Unary::Exp => v.exp(),
        Unary::Tanh => v.tanh(),
        Unary::Identity => v,
    }
}

fn unary_derivative(f: Unary, x: f64, y: f64) -> f64 {
    match f {
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::LeakyRelu(s) => {
            if x > 0.0 {
                1.0
            } else {
                s
            }
        }
        Unary::Exp => y,
        Unary::Tanh => 1.0 - y * y,
        Unary::Identity => 1.0,
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
