//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. Node ids are issued in creation order, so the node list is a
//! topological order and the backward sweep is a single reverse scan.

use std::cell::RefCell;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Layer-norm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Floor applied before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, trans_b: bool },
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sigmoid(usize),
    Tanh(usize),
    Gelu(usize),
    Ln(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { x: usize, start: usize },
    SelectRows { x: usize, rows: Vec<usize> },
    MeanRows(usize),
    Sum(usize),
    Pick { x: usize, picks: Vec<(usize, usize)> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of forward operations. Single-threaded; build one per scene.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf; it participates in differentiation iff the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&self, t: &Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.push(t.clone(), Op::Leaf, requires_grad)
    }

    pub fn param(&self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, true)
    }

    pub fn constant(&self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    // ---- linear algebra -------------------------------------------------

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_t(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2();
        let (bk, n) = if trans_b {
            let (n, k) = bv.dims2();
            (k, n)
        } else {
            bv.dims2()
        };
        if k != bk {
            let op = if trans_b { "matmul_t" } else { "matmul" };
            return Err(Error::shape(op, av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), trans_b, &mut out, false);
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a: a.0, b: b.0, trans_b },
            rg,
        ))
    }

    // ---- elementwise ----------------------------------------------------

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<(Tensor, Tensor)> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims2() != bv.dims2() {
            return Err(Error::shape(op, av.shape(), bv.shape()));
        }
        Ok((av, bv))
    }

    fn zip_with(&self, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(a.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_dims("add", a, b)?;
        let out = self.zip_with(&av, &bv, |x, y| x + y);
        Ok(self.push(out, Op::Add(a.0, b.0), self.needs(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_dims("sub", a, b)?;
        let out = self.zip_with(&av, &bv, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a.0, b.0), self.needs(&[a, b])))
    }

    /// Hadamard product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_dims("mul", a, b)?;
        let out = self.zip_with(&av, &bv, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a.0, b.0), self.needs(&[a, b])))
    }

    /// Adds the row vector `b` (width n) to every row of `a: m×n`.
    pub fn add_row(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, n) = av.dims2();
        if bv.numel() != n {
            return Err(Error::shape("add_row", av.shape(), bv.shape()));
        }
        let bias = bv.data();
        let mut out = av.data().to_vec();
        for i in 0..m {
            for (o, &bj) in out[i * n..(i + 1) * n].iter_mut().zip(bias) {
                *o += bj;
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(av.shape().to_vec(), out),
            Op::AddRow(a.0, b.0),
            rg,
        ))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a.0, s), self.needs(&[a]))
    }

    /// Sum of several equally shaped tensors, left to right.
    pub fn sum_all(&self, parts: &[Var]) -> Result<Var> {
        let (first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::Contract("sum of zero tensors".into()))?;
        rest.iter().try_fold(*first, |acc, &p| self.add(acc, p))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a.0), self.needs(&[a]))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a.0), self.needs(&[a]))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| gelu(x).0);
        self.push(out, Op::Gelu(a.0), self.needs(&[a]))
    }

    /// Natural log with inputs floored at [`LOG_FLOOR`].
    pub fn ln(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(LOG_FLOOR).ln());
        self.push(out, Op::Ln(a.0), self.needs(&[a]))
    }

    // ---- row-wise normalisers ---------------------------------------------

    pub fn softmax_rows(&self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = av.dims2();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(n).take(m) {
            softmax_in_place(row);
        }
        self.push(
            Tensor::from_parts(av.shape().to_vec(), out),
            Op::Softmax(a.0),
            self.needs(&[a]),
        )
    }

    pub fn log_softmax_rows(&self, a: Var) -> Var {
        let av = self.value(a);
        let (_, n) = av.dims2();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(n) {
            log_softmax_in_place(row);
        }
        self.push(
            Tensor::from_parts(av.shape().to_vec(), out),
            Op::LogSoftmax(a.0),
            self.needs(&[a]),
        )
    }

    /// Per-row normalisation to zero mean and unit variance, then `gain ⊙ · + bias`.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let (m, d) = xv.dims2();
        if d < 2 {
            return Err(Error::Degenerate {
                op: "layer_norm",
                width: d,
            });
        }
        if gv.numel() != d || bv.numel() != d {
            return Err(Error::shape("layer_norm", xv.shape(), gv.shape()));
        }
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &xv.data()[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(xv.shape().to_vec(), out),
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    // ---- structural -----------------------------------------------------

    /// Concatenates along columns; all parts must have the same row count.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = values
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?
            .rows();
        if let Some(bad) = values.iter().find(|v| v.rows() != rows) {
            return Err(Error::shape("concat_cols", values[0].shape(), bad.shape()));
        }
        let total: usize = values.iter().map(Tensor::cols).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for v in &values {
                out.extend_from_slice(v.row(i));
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            rg,
        ))
    }

    /// Stacks along rows; all parts must have the same column count.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let cols = values
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?
            .cols();
        if let Some(bad) = values.iter().find(|v| v.cols() != cols) {
            return Err(Error::shape("concat_rows", values[0].shape(), bad.shape()));
        }
        let rows: usize = values.iter().map(Tensor::rows).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for v in &values {
            out.extend_from_slice(v.data());
        }
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], out),
            Op::ConcatRows(parts.iter().map(|p| p.0).collect()),
            rg,
        ))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        if len == 0 || start + len > n {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, start + len]));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, len], out),
            Op::SliceCols { x: x.0, start },
            self.needs(&[x]),
        ))
    }

    /// Gathers rows (repeats allowed), e.g. an embedding lookup.
    pub fn select_rows(&self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        if rows.is_empty() {
            return Err(Error::Contract("select_rows with no rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::shape("select_rows", xv.shape(), &[bad]));
        }
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(xv.row(r));
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), n], out),
            Op::SelectRows {
                x: x.0,
                rows: rows.to_vec(),
            },
            self.needs(&[x]),
        ))
    }

    /// Column means, as a `1×n` row.
    pub fn mean_rows(&self, x: Var) -> Var {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, &v) in out.iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        self.push(
            Tensor::from_parts(vec![1, n], out),
            Op::MeanRows(x.0),
            self.needs(&[x]),
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0), self.needs(&[x]))
    }

    /// Picks the listed `(row, col)` entries into a vector.
    pub fn pick(&self, x: Var, picks: &[(usize, usize)]) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        if picks.is_empty() {
            return Err(Error::Contract("pick with no entries".into()));
        }
        if let Some(&(r, c)) = picks.iter().find(|&&(r, c)| r >= m || c >= n) {
            return Err(Error::shape("pick", xv.shape(), &[r, c]));
        }
        let out = picks.iter().map(|&(r, c)| xv.at(r, c)).collect();
        Ok(self.push(
            Tensor::from_parts(vec![picks.len()], out),
            Op::Pick {
                x: x.0,
                picks: picks.to_vec(),
            },
            self.needs(&[x]),
        ))
    }

    // ---- backward -------------------------------------------------------

    /// Differentiates the scalar `loss` with respect to every leaf that
    /// requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut leaves: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let out = &node.value;
            let mut acc = |j: usize, contrib: Vec<f64>| {
                if !nodes[j].requires_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(existing) => {
                        for (e, c) in existing.iter_mut().zip(contrib) {
                            *e += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |j: usize| &nodes[j].value;
            let wants = |j: usize| nodes[j].requires_grad;

            match &node.op {
                Op::Leaf => {
                    leaves[i] = Some(Tensor::from_parts(out.shape().to_vec(), g));
                }
                &Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (val(a), val(b));
                    let (m, k) = av.dims2();
                    let n = out.cols();
                    if wants(a) {
                        // dA = G · B  (trans_b)  or  G · Bᵀ
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &g, false, bv.data(), !trans_b, &mut da, false);
                        acc(a, da);
                    }
                    if wants(b) {
                        let mut db = vec![0.0; k * n];
                        if trans_b {
                            // dB (n×k) = Gᵀ · A
                            gemm(n, m, k, &g, true, av.data(), false, &mut db, false);
                        } else {
                            // dB (k×n) = Aᵀ · G
                            gemm(k, m, n, av.data(), true, &g, false, &mut db, false);
                        }
                        acc(b, db);
                    }
                }
                &Op::Add(a, b) => {
                    acc(a, g.clone());
                    acc(b, g);
                }
                &Op::Sub(a, b) => {
                    acc(b, g.iter().map(|x| -x).collect());
                    acc(a, g);
                }
                &Op::Mul(a, b) => {
                    if wants(a) {
                        acc(a, g.iter().zip(val(b).data()).map(|(x, y)| x * y).collect());
                    }
                    if wants(b) {
                        acc(b, g.iter().zip(val(a).data()).map(|(x, y)| x * y).collect());
                    }
                }
                &Op::AddRow(a, b) => {
                    if wants(b) {
                        let n = out.cols();
                        let mut db = vec![0.0; n];
                        for row in g.chunks(n) {
                            for (d, x) in db.iter_mut().zip(row) {
                                *d += x;
                            }
                        }
                        acc(b, db);
                    }
                    acc(a, g);
                }
                &Op::Scale(a, s) => acc(a, g.iter().map(|x| x * s).collect()),
                &Op::Softmax(a) => {
                    let n = out.cols();
                    let mut da = vec![0.0; g.len()];
                    for ((gr, yr), dr) in g.chunks(n).zip(out.data().chunks(n)).zip(da.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((d, &gy), &y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = y * (gy - dot);
                        }
                    }
                    acc(a, da);
                }
                &Op::LogSoftmax(a) => {
                    let n = out.cols();
                    let mut da = vec![0.0; g.len()];
                    for ((gr, yr), dr) in g.chunks(n).zip(out.data().chunks(n)).zip(da.chunks_mut(n)) {
                        let total: f64 = gr.iter().sum();
                        for ((d, &gy), &y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = gy - y.exp() * total;
                        }
                    }
                    acc(a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let d = out.cols();
                    let gv = val(*gain).data();
                    if wants(*gain) {
                        let mut dg = vec![0.0; d];
                        for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                dg[j] += gr[j] * hr[j];
                            }
                        }
                        acc(*gain, dg);
                    }
                    if wants(*bias) {
                        let mut db = vec![0.0; d];
                        for gr in g.chunks(d) {
                            for j in 0..d {
                                db[j] += gr[j];
                            }
                        }
                        acc(*bias, db);
                    }
                    if wants(*x) {
                        let mut dx = vec![0.0; g.len()];
                        for (i, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                            let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                            let mean_dh = dh.iter().sum::<f64>() / d as f64;
                            let mean_dh_h =
                                dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for j in 0..d {
                                dx[i * d + j] = inv_std[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                            }
                        }
                        acc(*x, dx);
                    }
                }
                &Op::Sigmoid(a) => acc(
                    a,
                    g.iter().zip(out.data()).map(|(gy, y)| gy * y * (1.0 - y)).collect(),
                ),
                &Op::Tanh(a) => acc(
                    a,
                    g.iter().zip(out.data()).map(|(gy, y)| gy * (1.0 - y * y)).collect(),
                ),
                &Op::Gelu(a) => acc(
                    a,
                    g.iter().zip(val(a).data()).map(|(gy, &x)| gy * gelu(x).1).collect(),
                ),
                &Op::Ln(a) => acc(
                    a,
                    g.iter()
                        .zip(val(a).data())
                        .map(|(gy, &x)| if x > LOG_FLOOR { gy / x } else { 0.0 })
                        .collect(),
                ),
                Op::ConcatCols(parts) => {
                    let total = out.cols();
                    let rows = out.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        if wants(p) {
                            let mut dp = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                            }
                            acc(p, dp);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).numel();
                        if wants(p) {
                            acc(p, g[offset..offset + len].to_vec());
                        }
                        offset += len;
                    }
                }
                &Op::SliceCols { x, start } => {
                    let (m, n) = val(x).dims2();
                    let w = out.cols();
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        dx[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    acc(x, dx);
                }
                Op::SelectRows { x, rows } => {
                    let (m, n) = val(*x).dims2();
                    let mut dx = vec![0.0; m * n];
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            dx[r * n + j] += g[k * n + j];
                        }
                    }
                    acc(*x, dx);
                }
                &Op::MeanRows(x) => {
                    let (m, n) = val(x).dims2();
                    let mut dx = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        dx.extend(g.iter().map(|v| v / m as f64));
                    }
                    acc(x, dx);
                }
                &Op::Sum(x) => acc(x, vec![g[0]; val(x).numel()]),
                Op::Pick { x, picks } => {
                    let (m, n) = val(*x).dims2();
                    let mut dx = vec![0.0; m * n];
                    for (k, &(r, c)) in picks.iter().enumerate() {
                        dx[r * n + c] += g[k];
                    }
                    acc(*x, dx);
                }
            }
        }
        Ok(Gradients { grads: leaves })
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

/// Value and derivative of the tanh-approximated GELU.
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let value = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * A * x * x);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (value, deriv)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// `c = a' · b'` (or `c += ...`), where `a'` is `a` (m×k) or `aᵀ` with `a`
/// stored k×m, and `b'` is `b` (k×n) or `bᵀ` with `b` stored n×k.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these strides; `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
