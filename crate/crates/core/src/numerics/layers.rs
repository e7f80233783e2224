//! Composite blocks built from graph primitives: affine maps, the LSTM cell
//! and the gated linear fusion.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Glorot-uniform initialised `d_in × d_out` matrix.
pub fn xavier<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (d_in + d_out) as f64).sqrt();
    Tensor::uniform(&[d_in, d_out], bound, rng)
}

/// `x · W (+ b)` over row vectors.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), xavier(d_in, d_out, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Linear { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        match self.b {
            Some(b) => g.add_row(y, p[b]),
            None => Ok(y),
        }
    }
}

/// Input/forget/output gates and the tanh candidate, packed column-wise in
/// that order into `4·d_h` wide matrices.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Self {
        let w_x = store.add(format!("{name}.w_x"), xavier(d_in, 4 * d_h, rng));
        let w_h = store.add(format!("{name}.w_h"), xavier(d_h, 4 * d_h, rng));
        let mut bias = vec![0.0; 4 * d_h];
        // forget gate starts open
        bias[d_h..2 * d_h].fill(1.0);
        let b = store.add(format!("{name}.b"), Tensor::vector(bias));
        LstmParams {
            w_x,
            w_h,
            b,
            d_in,
            d_h,
        }
    }
}

/// One LSTM step over `B` independent rows; returns `(h, m)`, each `B×d_h`.
pub fn lstm_cell(
    g: &Graph,
    p: &Bound,
    params: &LstmParams,
    x: Var,
    h_prev: Var,
    m_prev: Var,
) -> Result<(Var, Var)> {
    let d = params.d_h;
    let rows = g.value(x).rows();
    for (v, want) in [(x, params.d_in), (h_prev, d), (m_prev, d)] {
        if g.value(v).dims2() != (rows, want) {
            return Err(Error::Shape {
                op: "lstm_cell",
                lhs: g.shape(v),
                rhs: vec![rows, want],
            });
        }
    }
    let pre = g.add(g.matmul(x, p[params.w_x])?, g.matmul(h_prev, p[params.w_h])?)?;
    let pre = g.add_row(pre, p[params.b])?;
    let input = g.sigmoid(g.slice_cols(pre, 0, d)?);
    let forget = g.sigmoid(g.slice_cols(pre, d, d)?);
    let output = g.sigmoid(g.slice_cols(pre, 2 * d, d)?);
    let candidate = g.tanh(g.slice_cols(pre, 3 * d, d)?);
    let m = g.add(g.mul(forget, m_prev)?, g.mul(input, candidate)?)?;
    let h = g.mul(output, g.tanh(m))?;
    Ok((h, m))
}

/// Gated linear fusion of a query and a value vector:
/// `(W_i·[q;v] + b_i) ⊙ σ(W_g·[q;v] + b_g)`.
#[derive(Clone, Debug)]
pub struct GluParams {
    pub info: Linear,
    pub gate: Linear,
    pub d_query: usize,
    pub d_value: usize,
}

impl GluParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_query: usize,
        d_value: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let d_in = d_query + d_value;
        GluParams {
            info: Linear::new(store, &format!("{name}.info"), d_in, d_out, true, rng),
            gate: Linear::new(store, &format!("{name}.gate"), d_in, d_out, true, rng),
            d_query,
            d_value,
        }
    }

    pub fn d_out(&self) -> usize {
        self.info.d_out
    }
}

pub fn glu_fuse(g: &Graph, p: &Bound, params: &GluParams, query: Var, value: Var) -> Result<Var> {
    let (qs, vs) = (g.shape(query), g.shape(value));
    let (q, v) = (g.value(query).dims2(), g.value(value).dims2());
    if q.1 != params.d_query || v.1 != params.d_value || q.0 != v.0 {
        return Err(Error::Shape {
            op: "glu_fuse",
            lhs: qs,
            rhs: vs,
        });
    }
    let joint = g.concat_cols(&[query, value])?;
    let info = params.info.forward(g, p, joint)?;
    let gate = g.sigmoid(params.gate.forward(g, p, joint)?);
    g.mul(info, gate)
}
